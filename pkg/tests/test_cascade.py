import math

import numpy as np
import pytest

from cog3d.cascade import (
    WALL_RBF_CENTERS,
    WALL_RBF_SIGMA,
    DetectionSet,
    cascade_rescore,
    detections_to_text,
    layout_context_features,
    layout_context_length,
    object_context_features,
    object_context_length,
    overlap_scores,
    second_stage_layout,
    wall_distance_angle,
)
from cog3d.errors import MissingModel, NoCandidates
from cog3d.geometry import CameraIntrinsics, CameraPose, OrientedCuboid
from cog3d.learn import KernelSVMModel
from cog3d.pointcloud import ScenePointCloud
from cog3d.proposals import Detection

CATS = ("chair", "table")


def cuboid(cx, cy, cz, yaw, w, d, h):
    return OrientedCuboid(center=np.array([cx, cy, cz]), yaw=yaw, size=(w, d, h))


ROOM = cuboid(0, 0, 1.25, 0.0, 4, 4, 2.5)


def det_set(dets, layout=ROOM, layout_score=0.5):
    by_cat = {}
    for d in dets:
        by_cat.setdefault(d.category, []).append(d)
    for v in by_cat.values():
        v.sort(key=lambda d: -d.final_score)
    return DetectionSet(detections=by_cat, layout=layout, layout_score=layout_score)


# ----------------------------------------------------------- overlap scores


def test_overlap_identity():
    b = cuboid(0, 0, 0.5, 0.3, 1, 1, 1)
    assert overlap_scores(b, b) == pytest.approx((1.0, 1.0, 1.0))


def test_overlap_disjoint():
    a = cuboid(0, 0, 0.5, 0.0, 1, 1, 1)
    b = cuboid(5, 5, 0.5, 0.0, 1, 1, 1)
    assert overlap_scores(a, b) == pytest.approx((0.0, 0.0, 0.0))


def test_overlap_nested_half_volume():
    outer = cuboid(0, 0, 0.5, 0.0, 1, 1, 1)
    inner = cuboid(0, 0, 0.25, 0.0, 1, 1, 0.5)
    s1, s2, s3 = overlap_scores(inner, outer)
    assert (s1, s2, s3) == pytest.approx((1.0, 0.5, 0.5))


def test_overlap_s3_bounded_by_min():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = cuboid(*rng.uniform(-1, 1, 2), 0.5, rng.uniform(0, 6),
                   *rng.uniform(0.4, 1.5, 3))
        b = cuboid(*rng.uniform(-1, 1, 2), 0.5, rng.uniform(0, 6),
                   *rng.uniform(0.4, 1.5, 3))
        s1, s2, s3 = overlap_scores(a, b)
        assert s3 <= min(s1, s2) + 1e-12


def test_overlap_planar_mode_uses_footprints():
    # Vertically disjoint but plan-view identical: planar overlap is full.
    a = cuboid(0, 0, 0.25, 0.0, 1, 1, 0.5)
    b = cuboid(0, 0, 2.0, 0.0, 1, 1, 0.5)
    assert overlap_scores(a, b)[2] == 0.0
    assert overlap_scores(a, b, planar=True) == pytest.approx((1.0, 1.0, 1.0))


# -------------------------------------------------------------------- walls


def test_wall_distance_center_of_square_room():
    b = cuboid(0, 0, 0.5, 0.0, 1, 1, 1)
    d, _ = wall_distance_angle(b, ROOM)
    assert d == pytest.approx(2.0)


def test_wall_angle_parallel_front():
    b = cuboid(1.5, 0, 0.5, math.pi / 2, 1, 1, 1)
    # nearest wall is x = +2 (vertical in plan); front at yaw pi/2 is
    # parallel to it
    _, a = wall_distance_angle(b, ROOM)
    assert a == pytest.approx(0.0, abs=1e-9)


def test_wall_distance_matches_sampled_oracle():
    rng = np.random.default_rng(1)
    layout = cuboid(0.4, -0.2, 1.2, 0.3, 5, 4, 2.4)
    corners = []
    c, s = math.cos(layout.yaw), math.sin(layout.yaw)
    r = np.array([[c, -s], [s, c]])
    for sx, sy in [(-1, -1), (1, -1), (1, 1), (-1, 1)]:
        corners.append(
            layout.center[:2]
            + r @ np.array([sx * layout.size[0] / 2, sy * layout.size[1] / 2])
        )
    t = np.linspace(0.0, 1.0, 20001)
    wall_pts = np.concatenate(
        [corners[i] + t[:, None] * (corners[(i + 1) % 4] - corners[i])
         for i in range(4)]
    )
    for _ in range(20):
        b = cuboid(*rng.uniform(-1.5, 1.5, 2), 0.5, rng.uniform(0, 6), 1, 1, 1)
        d, _ = wall_distance_angle(b, layout)
        oracle = np.min(np.linalg.norm(wall_pts - b.center[:2], axis=1))
        assert d == pytest.approx(oracle, abs=1e-6)


# ---------------------------------------------------------- object features


def test_object_context_feature_length():
    c = len(CATS)
    assert object_context_length(c) == 2 + 9 * c + c + 11 + 1
    d = Detection("chair", cuboid(0, 0, 0.5, 0.0, 1, 1, 1), 0.7)
    feats = object_context_features(d, det_set([d]), CATS)
    assert len(feats) == object_context_length(c)
    assert np.all(np.isfinite(feats))


def test_object_context_bias_and_score_prefix():
    d = Detection("chair", cuboid(0, 0, 0.5, 0.0, 1, 1, 1), 0.7)
    feats = object_context_features(d, det_set([d]), CATS)
    assert feats[0] == 1.0
    assert feats[1] == pytest.approx(0.7)


def test_isolated_detection_zero_overlap_block():
    d = Detection("chair", cuboid(0, 0, 0.5, 0.0, 1, 1, 1), 0.7)
    other = Detection("table", cuboid(10, 10, 0.5, 0.0, 1, 1, 1), 0.9)
    feats = object_context_features(d, det_set([d, other]), CATS)
    # overlap products for the 'table' slot are zero: no overlap
    table_idx = CATS.index("table")
    block = feats[2 + 9 * table_idx: 2 + 9 * (table_idx + 1)]
    assert np.all(block == 0.0)


def test_wall_rbf_first_entry_when_touching_wall():
    d = Detection("chair", cuboid(2.0, 0, 0.5, 0.0, 1, 1, 1), 0.7)
    feats = object_context_features(d, det_set([d]), CATS)
    rbf_start = 2 + 9 * len(CATS) + len(CATS)
    rbf = feats[rbf_start: rbf_start + 11]
    assert rbf[0] == pytest.approx(1.0)
    # and the block matches the direct Gaussian formula
    dist, _ = wall_distance_angle(d.cuboid, ROOM)
    ref = np.exp(-((dist - WALL_RBF_CENTERS) ** 2) / (2 * WALL_RBF_SIGMA ** 2))
    assert np.allclose(rbf, ref)


# ---------------------------------------------------------- layout features


def tiny_cloud():
    rng = np.random.default_rng(2)
    pts = rng.uniform(-1.8, 1.8, (300, 3))
    pts[:, 2] = rng.uniform(0.0, 2.4, 300)
    return ScenePointCloud(
        points=pts,
        pixels=np.zeros((300, 2), dtype=np.int64),
        camera_center=np.array([0.0, -1.5, 1.2]),
    )


def test_layout_context_feature_length():
    c = len(CATS)
    assert layout_context_length(c) == 72 * 26 + c * 37
    d = Detection("chair", cuboid(0, 0, 0.5, 0.0, 1, 1, 1), 0.7)
    feats = layout_context_features(ROOM, det_set([d]), CATS, tiny_cloud())
    assert len(feats) == layout_context_length(c)


def test_layout_context_no_detections_only_manhattan_block():
    feats = layout_context_features(ROOM, det_set([]), CATS, tiny_cloud())
    manhattan = feats[: 72 * 26]
    rest = feats[72 * 26:]
    assert np.any(manhattan != 0.0)
    assert np.all(rest == 0.0)


# ----------------------------------------------------------------- rescoring


def trained_pair_model():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(20, 2))
    y = np.sign(x[:, 0])
    y[y == 0] = 1.0
    from cog3d.learn import train_rbf_svm

    return train_rbf_svm(x, y, gamma=0.5, c=5.0)


def test_rescore_final_score_formula():
    d1 = Detection("chair", cuboid(0, 0, 0.5, 0.0, 1, 1, 1), 0.7)
    d2 = Detection("chair", cuboid(1.2, 0, 0.5, 0.0, 1, 1, 1), 0.4)
    ds = det_set([d1, d2])
    from cog3d.learn import train_rbf_svm

    feats = np.stack(
        [object_context_features(d, ds, ("chair",)) for d in (d1, d2)]
    )
    model = train_rbf_svm(feats, np.array([1.0, -1.0]), gamma=0.1, c=5.0)
    out = cascade_rescore(ds, {"chair": model}, ("chair",))
    for before, after in zip(ds.detections["chair"], out.detections["chair"]):
        z2 = model.decision(
            object_context_features(before, ds, ("chair",))[None, :]
        )[0]
        assert after.cascade_score == pytest.approx(z2)
        assert after.final_score == pytest.approx(before.score + z2)
    assert len(out.detections["chair"]) == 2  # never drops detections


def test_rescore_missing_model_raises():
    d = Detection("chair", cuboid(0, 0, 0.5, 0.0, 1, 1, 1), 0.7)
    with pytest.raises(MissingModel):
        cascade_rescore(det_set([d]), {}, ("chair",))


# ------------------------------------------------------- second-stage layout


def test_second_stage_layout_single_candidate():
    ds = det_set([])
    w = np.zeros(layout_context_length(len(CATS)))
    best = second_stage_layout([ROOM], ds, w, CATS, tiny_cloud())
    assert best is ROOM


def test_second_stage_layout_no_candidates():
    ds = det_set([])
    w = np.zeros(layout_context_length(len(CATS)))
    with pytest.raises(NoCandidates):
        second_stage_layout([], ds, w, CATS, tiny_cloud())


def test_detections_to_text_parses():
    d = Detection("chair", cuboid(0, 0, 0.5, 0.0, 1, 1, 1), 0.7, 0.1, 3)
    text = detections_to_text(det_set([d]))
    line = [ln for ln in text.splitlines() if ln and not ln.startswith("#")][0]
    parts = line.split()
    assert parts[0] == "chair"
    assert len(parts) >= 10
