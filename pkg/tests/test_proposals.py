import itertools
import math

import numpy as np
import pytest

from cog3d.errors import NoAnnotations
from cog3d.geometry import OrientedCuboid, cuboid_iou_3d, detection_loss
from cog3d.proposals import (
    Detection,
    ProposalGrid,
    compute_size_quantiles,
    generate_floor_proposals,
    generate_surface_proposals,
    nms_3d,
    surface_height,
)


def cuboid(cx, cy, cz, yaw, w, d, h):
    return OrientedCuboid(center=np.array([cx, cy, cz]), yaw=yaw, size=(w, d, h))


# ---------------------------------------------------------------- quantiles


def test_identical_annotations_give_constant_quantiles():
    anns = [cuboid(0, 0, 0.5, 0.0, 1.2, 0.8, 1.0)] * 5
    q = compute_size_quantiles(anns)
    assert all(w == pytest.approx(1.2) for w in q.widths)
    assert all(d == pytest.approx(0.8) for d in q.depths)
    assert all(h == pytest.approx(1.0) for h in q.heights)


def test_quantiles_match_order_statistics_oracle():
    anns = [cuboid(0, 0, 0.5, 0.0, float(w), 1.0, 1.0) for w in range(1, 101)]
    q = compute_size_quantiles(anns)
    values = np.arange(1.0, 101.0)
    expected = np.quantile(values, [0.1, 0.3, 0.5, 0.7, 0.9])
    assert np.allclose(q.widths, expected)
    assert q.widths[2] == pytest.approx(50.5)


def test_quantile_counts():
    anns = [cuboid(0, 0, 0.5, 0.0, w, d, h)
            for w, d, h in np.random.default_rng(0).uniform(0.5, 2.0, (20, 3))]
    q = compute_size_quantiles(anns)
    assert len(q.widths) == 5 and len(q.depths) == 3 and len(q.heights) == 3


def test_no_annotations_raises():
    with pytest.raises(NoAnnotations):
        compute_size_quantiles([])


# ---------------------------------------------------------- floor proposals


def distinct_sizes():
    rng = np.random.default_rng(1)
    anns = [cuboid(0, 0, 0.5, 0.0, w, d, h)
            for w, d, h in rng.uniform(0.5, 2.0, (40, 3))]
    return compute_size_quantiles(anns)


def test_floor_proposal_count_is_cartesian_product():
    sizes = distinct_sizes()
    combos = len(set(itertools.product(sizes.widths, sizes.depths, sizes.heights)))
    assert combos == 45
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 0.0]])
    grid = ProposalGrid(step=0.5, n_orientations=16, ground_z=0.0)
    props = generate_floor_proposals(pts, sizes, grid)
    n_positions = 3 * 3  # 0, 0.5, 1.0 in each plan axis
    assert len(props) == n_positions * 16 * 45


def test_floor_proposals_base_exactly_on_ground():
    sizes = distinct_sizes()
    grid = ProposalGrid(step=0.7, n_orientations=4, ground_z=0.35)
    pts = np.random.default_rng(2).uniform(-1, 1, (50, 3))
    props = generate_floor_proposals(pts, sizes, grid)
    assert props
    for b in props[:200]:
        assert b.center[2] == 0.35 + b.size[2] / 2


def test_floor_proposals_empty_extent():
    sizes = distinct_sizes()
    grid = ProposalGrid(step=0.5, n_orientations=4, ground_z=0.0)
    props = generate_floor_proposals(np.zeros((0, 3)), sizes, grid)
    assert props == []


def test_planted_object_covered_within_loss_bound():
    gt = cuboid(0.3, -0.2, 0.5, 0.1, 1.0, 0.8, 1.0)
    sizes = compute_size_quantiles([gt] * 3)
    pts = np.random.default_rng(3).uniform(-1.5, 1.5, (100, 3))
    grid = ProposalGrid(step=0.2, n_orientations=16, ground_z=0.0)
    props = generate_floor_proposals(pts, sizes, grid)
    best = min(detection_loss(gt, p) for p in props)
    assert best <= 0.3


# -------------------------------------------------------- surface proposals


def test_surface_height_formula():
    sup = cuboid(0, 0, 0.5, 0.0, 1, 1, 1.4)
    z_lo = 0.5 - 0.7
    for h in range(1, 8):
        assert surface_height(sup, h) == pytest.approx(z_lo + 1.4 * h / 7)


def test_surface_proposals_empty_without_supporters():
    sizes = distinct_sizes()
    grid = ProposalGrid(step=0.2, n_orientations=4, ground_z=0.0)
    assert generate_surface_proposals([], sizes, grid) == []


def test_surface_proposals_rest_on_slice_and_stay_inside_footprint():
    sup = cuboid(0.5, -0.3, 0.5, 0.4, 1.6, 0.9, 1.0)
    sizes = compute_size_quantiles([cuboid(0, 0, 0, 0, 0.4, 0.3, 0.25)] * 3)
    grid = ProposalGrid(step=0.2, n_orientations=4, ground_z=0.0)
    h = 5
    props = generate_surface_proposals(
        [(Detection("table", sup, 1.0), h)], sizes, grid
    )
    assert props
    z_surf = surface_height(sup, h)
    c, s = math.cos(-sup.yaw), math.sin(-sup.yaw)
    for b in props:
        assert b.center[2] - b.size[2] / 2 == pytest.approx(z_surf)
        dx = b.center[0] - sup.center[0]
        dy = b.center[1] - sup.center[1]
        lx = c * dx - s * dy
        ly = s * dx + c * dy
        assert abs(lx) <= sup.size[0] / 2 + 1e-9
        assert abs(ly) <= sup.size[1] / 2 + 1e-9


# ----------------------------------------------------------------------- nms


def rand_detections(rng, n):
    return [
        Detection(
            "x",
            cuboid(*rng.uniform(-1.5, 1.5, 2), 0.5, rng.uniform(0, 2 * math.pi),
                   *rng.uniform(0.5, 1.5, 3)),
            float(s),
        )
        for s in -np.sort(-rng.uniform(0, 1, n))
    ]


def brute_force_nms(dets, thr):
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].final_score, i))
    kept = []
    for i in order:
        if all(cuboid_iou_3d(dets[i].cuboid, dets[j].cuboid) <= thr for j in kept):
            kept.append(i)
    return [dets[i] for i in kept]


def test_nms_single_detection():
    d = rand_detections(np.random.default_rng(4), 1)
    assert nms_3d(d, 0.25) == d


def test_nms_identical_pair_keeps_higher():
    b = cuboid(0, 0, 0.5, 0.0, 1, 1, 1)
    lo, hi = Detection("x", b, 0.2), Detection("x", b, 0.9)
    kept = nms_3d([lo, hi], 0.25)
    assert kept == [hi]


def test_nms_matches_brute_force_on_random_sets():
    rng = np.random.default_rng(5)
    for _ in range(100):
        dets = rand_detections(rng, int(rng.integers(0, 12)))
        got = nms_3d(dets, 0.25)
        ref = brute_force_nms(dets, 0.25)
        assert [id(d) for d in got] == [id(d) for d in ref]


def test_nms_output_is_antichain():
    rng = np.random.default_rng(6)
    for _ in range(20):
        kept = nms_3d(rand_detections(rng, 15), 0.25)
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                assert cuboid_iou_3d(kept[i].cuboid, kept[j].cuboid) <= 0.25
