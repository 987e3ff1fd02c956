"""Cuboid hypothesis generation: size quantiles from annotations, floor
sliding-window proposals, surface-constrained proposals for small
categories, and 3D non-maximum suppression."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NoAnnotations
from .geometry import OrientedCuboid, cuboid_iou_3d

WIDTH_QUANTILES = (0.1, 0.3, 0.5, 0.7, 0.9)
DEPTH_QUANTILES = (0.25, 0.5, 0.75)
HEIGHT_QUANTILES = (0.3, 0.5, 0.8)


@dataclass(frozen=True)
class SizeQuantiles:
    """Per-category candidate extents (meters), sorted ascending."""

    widths: tuple[float, ...]
    depths: tuple[float, ...]
    heights: tuple[float, ...]

    def __post_init__(self):
        for vals in (self.widths, self.depths, self.heights):
            if any(v <= 0 for v in vals) or list(vals) != sorted(vals):
                raise ValueError("size quantiles must be positive and sorted")

    def combinations(self, unique: bool = False) -> np.ndarray:
        """All (width, depth, height) candidates, shape (k, 3); k = 45 for
        the default quantile levels unless unique=True collapses
        duplicates."""
        w, d, h = np.meshgrid(self.widths, self.depths, self.heights, indexing="ij")
        combos = np.stack([w.ravel(), d.ravel(), h.ravel()], axis=1)
        if unique:
            combos = np.unique(combos, axis=0)
        return combos


@dataclass(frozen=True)
class ProposalGrid:
    """Sliding-window discretization for floor proposals."""

    step: float = 0.1
    n_orientations: int = 16
    ground_z: float = 0.0
    full_circle: bool = True  # per-category: False for yaw-symmetric boxes

    def __post_init__(self):
        if self.step <= 0 or self.n_orientations < 1:
            raise ValueError("step must be positive and orientations >= 1")

    def orientations(self) -> np.ndarray:
        span = 2.0 * np.pi if self.full_circle else np.pi
        return np.arange(self.n_orientations) * (span / self.n_orientations)


def compute_size_quantiles(annotations: list[OrientedCuboid]) -> SizeQuantiles:
    """Empirical size quantiles (linear interpolation between order
    statistics) of a category's training annotations."""
    if not annotations:
        raise NoAnnotations("at least one annotation is required")
    sizes = np.array([c.size for c in annotations], dtype=np.float64)
    return SizeQuantiles(
        widths=tuple(np.quantile(sizes[:, 0], WIDTH_QUANTILES, method="linear")),
        depths=tuple(np.quantile(sizes[:, 1], DEPTH_QUANTILES, method="linear")),
        heights=tuple(np.quantile(sizes[:, 2], HEIGHT_QUANTILES, method="linear")),
    )


def generate_floor_proposals(
    points: np.ndarray,
    sizes: SizeQuantiles,
    grid: ProposalGrid,
    unique_sizes: bool = False,
) -> list[OrientedCuboid]:
    """Cartesian product of plan-view grid positions over the cloud's
    extent, grid orientations, and size combinations; every cuboid's base
    rests exactly on the ground plane."""
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        return []
    x_lo, y_lo = points[:, 0].min(), points[:, 1].min()
    x_hi, y_hi = points[:, 0].max(), points[:, 1].max()
    xs = _grid_1d(x_lo, x_hi, grid.step)
    ys = _grid_1d(y_lo, y_hi, grid.step)
    combos = sizes.combinations(unique=unique_sizes)
    out: list[OrientedCuboid] = []
    for x in xs:
        for y in ys:
            for yaw in grid.orientations():
                for w, d, h in combos:
                    out.append(
                        OrientedCuboid(
                            center=(x, y, grid.ground_z + h / 2.0),
                            yaw=float(yaw),
                            size=(float(w), float(d), float(h)),
                        )
                    )
    return out


def _grid_1d(lo: float, hi: float, step: float) -> np.ndarray:
    n = max(1, int(np.floor((hi - lo) / step)) + 1)
    return lo + step * np.arange(n)


def surface_height(supporter: OrientedCuboid, h: int, n_slices: int = 7) -> float:
    """World z of the top of latent slice h (1-based) of a supporter."""
    z_lo, z_hi = supporter.z_interval()
    return z_lo + (z_hi - z_lo) * (h / n_slices)


def generate_surface_proposals(
    supporters: list[tuple["Detection", int]],
    sizes: SizeQuantiles,
    grid: ProposalGrid,
    unique_sizes: bool = False,
) -> list[OrientedCuboid]:
    """Proposals for small categories: plan-view positions restricted to
    each supporter's footprint, bases resting on the supporter's imputed
    surface height. Empty when no supporters are given."""
    combos = sizes.combinations(unique=unique_sizes)
    out: list[OrientedCuboid] = []
    for det, h in supporters:
        sup = det.cuboid
        z_surf = surface_height(sup, h)
        half_w, half_d = sup.size[0] / 2.0, sup.size[1] / 2.0
        us = _centered_grid(half_w, grid.step)
        vs = _centered_grid(half_d, grid.step)
        axes = sup.axes()
        for u in us:
            for v in vs:
                center_xy = (
                    np.asarray(sup.center[:2])
                    + u * axes[0, :2]
                    + v * axes[1, :2]
                )
                for yaw in grid.orientations():
                    for w, d, hh in combos:
                        out.append(
                            OrientedCuboid(
                                center=(center_xy[0], center_xy[1], z_surf + hh / 2.0),
                                yaw=float(yaw),
                                size=(float(w), float(d), float(hh)),
                            )
                        )
    return out


def _centered_grid(half: float, step: float) -> np.ndarray:
    n = int(np.floor(half / step))
    return step * np.arange(-n, n + 1)


@dataclass
class Detection:
    """A scored cuboid: first-stage score z, cascade score z', latent
    surface height h (0 when unused)."""

    category: str
    cuboid: OrientedCuboid
    score: float
    cascade_score: float = 0.0
    surface_slice: int = 0

    @property
    def final_score(self) -> float:
        return self.score + self.cascade_score


def nms_3d(detections: list[Detection], threshold: float = 0.25) -> list[Detection]:
    """Greedy non-maximum suppression by descending final score (ties by
    input index); suppresses any detection whose IOU with a kept one
    exceeds the threshold."""
    scores = np.array([d.final_score for d in detections])
    order = np.argsort(-scores, kind="stable")
    kept: list[Detection] = []
    for idx in order:
        cand = detections[idx]
        if all(cuboid_iou_3d(cand.cuboid, k.cuboid) <= threshold for k in kept):
            kept.append(cand)
    return kept


def proposals_to_text(cuboids: list[OrientedCuboid]) -> str:
    """Line-oriented debug export: cx cy cz yaw w d h per proposal."""
    lines = [
        "%.6f %.6f %.6f %.6f %.6f %.6f %.6f"
        % (c.center[0], c.center[1], c.center[2], c.yaw, c.size[0], c.size[1], c.size[2])
        for c in cuboids
    ]
    return "\n".join(lines) + ("\n" if lines else "")
