"""Second-stage contextual rescoring: geometric relation features between
detections and the layout, kernel-SVM rescoring of detections, and
linear rescoring of layout candidates."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import MissingModel, NoCandidates
from .geometry import (
    OrientedCuboid,
    cuboid_intersection_volume,
    footprint_overlap_area,
    plan_view_footprint,
)
from .layout import layout_features
from .learn import KernelSVMModel
from .pointcloud import ScenePointCloud
from .proposals import Detection

# RBF expansion of wall distance: centers 0..5 m step 0.5, bandwidth 0.5.
WALL_RBF_CENTERS = np.arange(0.0, 5.0 + 1e-9, 0.5)
WALL_RBF_SIGMA = 0.5


@dataclass
class DetectionSet:
    """Per-category NMS survivors plus the best first-stage layout."""

    detections: dict[str, list[Detection]]
    layout: OrientedCuboid
    layout_score: float = 0.0

    def __post_init__(self):
        for cat, dets in self.detections.items():
            self.detections[cat] = sorted(
                dets, key=lambda d: -d.score
            )

    def best(self, category: str) -> Detection | None:
        dets = self.detections.get(category)
        return dets[0] if dets else None

    def all_detections(self) -> list[Detection]:
        out = []
        for cat in sorted(self.detections):
            out.extend(self.detections[cat])
        return out


def overlap_scores(
    a: OrientedCuboid, b: OrientedCuboid, planar: bool = False
) -> tuple[float, float, float]:
    """Geometric relation of two cuboids: overlap normalized by each
    volume and by the union. planar=True uses top-down footprint areas
    (for small objects resting on supporters, where volumetric overlap is
    degenerate)."""
    if planar:
        inter = footprint_overlap_area(a, b)
        va = a.size[0] * a.size[1]
        vb = b.size[0] * b.size[1]
    else:
        inter = cuboid_intersection_volume(a, b)
        va, vb = a.volume, b.volume
    union = va + vb - inter
    if inter <= 0.0:
        return (0.0, 0.0, 0.0)
    return (inter / va, inter / vb, inter / union)


def wall_distance_angle(
    cuboid: OrientedCuboid, layout: OrientedCuboid
) -> tuple[float, float]:
    """Plan-view distance from the cuboid center to the nearest wall
    segment of the layout, and the acute angle between the cuboid's
    front direction and that wall."""
    corners = plan_view_footprint(layout)
    p = np.asarray(cuboid.center[:2], dtype=np.float64)
    best_d, best_dir = np.inf, np.zeros(2)
    for k in range(4):
        a, b = corners[k], corners[(k + 1) % 4]
        d, direction = _point_segment(p, a, b)
        if d < best_d:
            best_d, best_dir = d, direction
    front = np.array([np.cos(cuboid.yaw), np.sin(cuboid.yaw)])
    cosang = abs(float(front @ best_dir))
    angle = float(np.arccos(np.clip(cosang, 0.0, 1.0)))
    return float(best_d), angle


def _point_segment(
    p: np.ndarray, a: np.ndarray, b: np.ndarray
) -> tuple[float, np.ndarray]:
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    closest = a + t * ab
    direction = ab / np.sqrt(denom) if denom > 0 else np.array([1.0, 0.0])
    return float(np.linalg.norm(p - closest)), direction


def _wall_rbf(distance: float) -> np.ndarray:
    return np.exp(-((distance - WALL_RBF_CENTERS) ** 2) / (2.0 * WALL_RBF_SIGMA**2))


def object_context_length(n_categories: int) -> int:
    return 2 + 9 * n_categories + n_categories + len(WALL_RBF_CENTERS) + 1


def object_context_features(
    det: Detection,
    det_set: DetectionSet,
    categories: tuple[str, ...],
    small_categories: frozenset[str] = frozenset(),
) -> np.ndarray:
    """Contextual feature vector for one detection: bias + score, overlap
    products against each category's best detection, score differences,
    the RBF expansion of wall distance, and the wall-angle cosine.

    Categories whose best detection does not overlap this one contribute
    zeros to the overlap and score-difference blocks.
    """
    parts = [np.array([1.0, det.score])]
    z_i = det.score
    for cat in categories:
        other = det_set.best(cat)
        block = np.zeros(10)
        if other is not None:
            planar = det.category in small_categories or cat in small_categories
            s = overlap_scores(det.cuboid, other.cuboid, planar=planar)
            if max(s) > 0.0:
                sm = np.asarray(s)
                block[:9] = np.concatenate([sm, sm * other.score, sm * z_i])
                block[9] = z_i - other.score
        parts.append(block)
    dist, angle = wall_distance_angle(det.cuboid, det_set.layout)
    parts.append(_wall_rbf(dist))
    parts.append(np.array([abs(np.cos(angle))]))
    vec = np.concatenate(parts)
    # Interleave check: blocks are [2] + C*[10] + [11] + [1].
    assert len(vec) == object_context_length(len(categories))
    return vec


def layout_context_length(n_categories: int) -> int:
    return 72 * 26 + n_categories * (3 * len(WALL_RBF_CENTERS) + 3 + 1)


def layout_context_features(
    layout: OrientedCuboid,
    det_set: DetectionSet,
    categories: tuple[str, ...],
    cloud: ScenePointCloud,
) -> np.ndarray:
    """Second-stage layout features: the 72x26 Manhattan-voxel block plus,
    per category, wall-distance RBF expansions and angle cosines of the
    best detection (each multiplied by 1, the layout score, and the
    detection score) and the layout/detection score difference."""
    parts = [layout_features(cloud, layout).ravel()]
    z_prime = det_set.layout_score
    for cat in categories:
        other = det_set.best(cat)
        block = np.zeros(3 * len(WALL_RBF_CENTERS) + 3 + 1)
        if other is not None:
            dist, angle = wall_distance_angle(other.cuboid, layout)
            rbf = _wall_rbf(dist)
            cosang = abs(np.cos(angle))
            block[: 3 * len(WALL_RBF_CENTERS)] = np.concatenate(
                [rbf, rbf * z_prime, rbf * other.score]
            )
            block[-4:-1] = [cosang, cosang * z_prime, cosang * other.score]
            block[-1] = z_prime - other.score
        parts.append(block)
    vec = np.concatenate(parts)
    assert len(vec) == layout_context_length(len(categories))
    return vec


def cascade_rescore(
    det_set: DetectionSet,
    models: dict[str, KernelSVMModel],
    categories: tuple[str, ...],
    small_categories: frozenset[str] = frozenset(),
) -> DetectionSet:
    """Rescore every detection with its category's second-stage kernel
    SVM; the final score is z + z'. No detection is dropped."""
    rescored: dict[str, list[Detection]] = {}
    for cat, dets in det_set.detections.items():
        if dets and cat not in models:
            raise MissingModel(f"no cascade model for category {cat!r}")
        new = []
        for det in dets:
            psi = object_context_features(det, det_set, categories, small_categories)
            z_prime = float(models[cat].decision(psi)[0])
            new.append(replace(det, cascade_score=z_prime))
        rescored[cat] = new
    return DetectionSet(
        detections=rescored, layout=det_set.layout, layout_score=det_set.layout_score
    )


def second_stage_layout(
    candidates: list[OrientedCuboid],
    det_set: DetectionSet,
    weights: np.ndarray,
    categories: tuple[str, ...],
    cloud: ScenePointCloud,
) -> OrientedCuboid:
    """Argmax of the second-stage linear layout score over candidates."""
    if not candidates:
        raise NoCandidates("no layout candidates")
    scores = [
        float(weights @ layout_context_features(c, det_set, categories, cloud))
        for c in candidates
    ]
    return candidates[int(np.argmax(scores))]


def detections_to_text(det_set: DetectionSet) -> str:
    """Structured text export: one record per detection."""
    lines = []
    for det in det_set.all_detections():
        c = det.cuboid
        lines.append(
            "%s %.6f %.6f %.6f %.6f %.6f %.6f %.6f %d %.6f %.6f %.6f"
            % (
                det.category,
                c.center[0],
                c.center[1],
                c.center[2],
                c.yaw,
                c.size[0],
                c.size[1],
                c.size[2],
                det.surface_slice,
                det.score,
                det.cascade_score,
                det.final_score,
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")
