"""Manhattan-voxel layout discretization, hypothesis enumeration, layout
features, free-space IOU, and the layout loss.

A layout is an oriented cuboid whose walls are its four side faces. The
Manhattan discretization has 72 bins: 6 vertical layers x 12 plan regions
(4 interior quadrants, 4 wall bands, 4 exterior quadrants).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCloud
from .geometry import CameraIntrinsics, CameraPose, OrientedCuboid
from .pointcloud import ScenePointCloud

WALL_BAND = 0.15  # meters
N_LAYERS = 6
N_REGIONS = 12
N_BINS = N_LAYERS * N_REGIONS
N_LAYOUT_ANGLES = 18
_SWEEP_STEP = 0.1  # meters, wall-offset grid
MAX_HYPOTHESES = 20000

# Re-exported type alias: layouts are cuboids whose yaw is identified
# modulo 90 degrees for loss purposes.
LayoutCuboid = OrientedCuboid


def manhattan_bins(
    points: np.ndarray, m: OrientedCuboid, floor_z: float, ceil_z: float
) -> np.ndarray:
    """(n,) bin index in 0..71 for each point. Partition is exact.

    Layer = clamp(floor(6 (z - floor) / (ceil - floor)), 0, 5). Plan region:
    wall band of the nearest wall when within 0.15 m of a wall plane
    (ties by wall index +x, +y, -x, -y); otherwise interior (0..3) or
    exterior (8..11) quadrant split by the rectangle diagonals.
    """
    if floor_z >= ceil_z:
        raise ValueError("floor must be below ceiling")
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    q = m.to_canonical(p)
    hw, hd = 0.5 * m.size[0], 0.5 * m.size[1]
    layer = np.clip(
        np.floor(N_LAYERS * (p[:, 2] - floor_z) / (ceil_z - floor_z)).astype(np.int64),
        0,
        N_LAYERS - 1,
    )
    x, y = q[:, 0], q[:, 1]
    # Unsigned distance to each wall plane; wall order: +x, +y, -x, -y.
    dists = np.column_stack([np.abs(x - hw), np.abs(y - hd), np.abs(x + hw), np.abs(y + hd)])
    nearest = np.argmin(dists, axis=1)  # argmin breaks ties by lowest index
    in_band = dists[np.arange(len(p)), nearest] <= WALL_BAND
    # Diagonal splits: quadrants of the rectangle scaled to a square.
    u = x * hd
    v = y * hw
    quad = np.where(
        u >= np.abs(v), 0, np.where(-u > np.abs(v), 2, np.where(v > np.abs(u), 1, 3))
    )
    inside = (np.abs(x) < hw) & (np.abs(y) < hd)
    region = np.where(in_band, 4 + nearest, np.where(inside, quad, 8 + quad))
    return layer * N_REGIONS + region


def manhattan_bin(point, m: OrientedCuboid, floor_z: float, ceil_z: float) -> int:
    return int(manhattan_bins(np.asarray(point).reshape(1, 3), m, floor_z, ceil_z)[0])


def _wall_offset_grid(lo: float, hi: float, step: float) -> np.ndarray:
    n = max(int(math.floor((hi - lo) / step)) + 1, 1)
    return lo + step * np.arange(n + 1)


def enumerate_layout_hypotheses(
    cloud: ScenePointCloud,
    min_containment: float = 0.8,
    step: float = _SWEEP_STEP,
    max_hypotheses: int = MAX_HYPOTHESES,
) -> list[OrientedCuboid]:
    """Candidate layout cuboids over 18 orientations and swept wall offsets.

    Floor and ceiling come from the 0.001/0.999 z-quantiles. Per orientation,
    wall offsets sweep a regular grid between the closest and farthest
    projected points; only cuboids containing at least ``min_containment``
    of the points are kept. The sweep grid is coarsened as needed to stay
    under ``max_hypotheses``.
    """
    pts = cloud.points
    if len(pts) == 0:
        raise EmptyCloud("cannot enumerate layouts for an empty cloud")
    floor_z = float(np.quantile(pts[:, 2], 0.001))
    ceil_z = float(np.quantile(pts[:, 2], 0.999))
    if ceil_z <= floor_z:
        ceil_z = floor_z + 1e-3
    out: list[OrientedCuboid] = []
    cur_step = step
    while True:
        out = []
        for k in range(N_LAYOUT_ANGLES):
            theta = k * math.pi / N_LAYOUT_ANGLES
            c, s = math.cos(theta), math.sin(theta)
            px = pts[:, 0] * c + pts[:, 1] * s
            py = -pts[:, 0] * s + pts[:, 1] * c
            # A valid layout keeps >= min_containment of points, so the low
            # walls cannot pass the (1 - min_containment) quantile.
            slack = 1.0 - min_containment
            x_lo = _wall_offset_grid(px.min(), np.quantile(px, slack), cur_step)
            x_hi = _wall_offset_grid(np.quantile(px, min_containment), px.max(), cur_step)
            y_lo = _wall_offset_grid(py.min(), np.quantile(py, slack), cur_step)
            y_hi = _wall_offset_grid(np.quantile(py, min_containment), py.max(), cur_step)
            need = min_containment * len(pts)
            for xl in x_lo:
                for xh in x_hi:
                    if xh <= xl:
                        continue
                    sel = (px >= xl) & (px <= xh)
                    if np.count_nonzero(sel) < need:
                        continue
                    pys = np.sort(py[sel])
                    lo_idx = np.searchsorted(pys, y_lo, side="left")
                    hi_idx = np.searchsorted(pys, y_hi, side="right")
                    counts = hi_idx[None, :] - lo_idx[:, None]  # (len(y_lo), len(y_hi))
                    il, ih = np.nonzero(
                        (counts >= need) & (y_hi[None, :] > y_lo[:, None])
                    )
                    for yl, yh in zip(y_lo[il], y_hi[ih]):
                        cx, cy = (xl + xh) / 2, (yl + yh) / 2
                        out.append(
                            OrientedCuboid(
                                (cx * c - cy * s, cx * s + cy * c, (floor_z + ceil_z) / 2),
                                theta,
                                (xh - xl, yh - yl, ceil_z - floor_z),
                            )
                        )
        if len(out) <= max_hypotheses or cur_step > 2.0:
            break
        cur_step *= 2.0
    return out


def layout_features(cloud: ScenePointCloud, m: OrientedCuboid) -> np.ndarray:
    """72 x 26 Manhattan-voxel features: per-bin density (normalized by the
    total point count) and 25-bin canonical-frame normal histograms."""
    floor_z, ceil_z = m.z_interval()
    bins = manhattan_bins(cloud.points, m, floor_z, ceil_z)
    n = len(cloud.points)
    density = np.bincount(bins, minlength=N_BINS).astype(np.float64) / max(n, 1)
    hist = np.zeros((N_BINS, 25))
    if cloud.normals is not None:
        from .descriptors import _NORMAL_BINS

        local = cloud.normals @ m.axes().T
        flip = local[:, 2] < 0
        local = np.where(flip[:, None], -local, local)
        nb = np.argmax(local @ _NORMAL_BINS.T, axis=1)
        np.add.at(hist, (bins, nb), 1.0)
        hist /= max(n, 1)
    return np.hstack([density[:, None], hist])


def free_space_iou(
    gt: OrientedCuboid,
    hyp: OrientedCuboid,
    camera: CameraPose,
    K: CameraIntrinsics,
    grid_pitch: float = 0.1,
) -> float:
    """IOU of the layouts' free-space masks on a plan-view grid restricted
    to the camera's horizontal field-of-view wedge, times the vertical
    interval IOU. Falls back to the unrestricted grid when the wedge misses
    the union entirely."""
    ga, gb = _plan_bounds(gt), _plan_bounds(hyp)
    lo = np.minimum(ga[0], gb[0]) - grid_pitch
    hi = np.maximum(ga[1], gb[1]) + grid_pitch
    xs = np.arange(lo[0] + grid_pitch / 2, hi[0], grid_pitch)
    ys = np.arange(lo[1] + grid_pitch / 2, hi[1], grid_pitch)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    cells = np.column_stack([gx.ravel(), gy.ravel()])
    in_gt = _inside_plan(cells, gt)
    in_hyp = _inside_plan(cells, hyp)
    union = in_gt | in_hyp
    if not union.any():
        return 0.0
    wedge = _camera_wedge_mask(cells, camera, K)
    if not (union & wedge).any():
        wedge = np.ones(len(cells), dtype=bool)
    inter = float(np.count_nonzero(in_gt & in_hyp & wedge))
    uni = float(np.count_nonzero(union & wedge))
    plan_iou = inter / uni if uni > 0 else 0.0
    za0, za1 = gt.z_interval()
    zb0, zb1 = hyp.z_interval()
    v_inter = max(0.0, min(za1, zb1) - max(za0, zb0))
    v_union = max(za1, zb1) - min(za0, zb0)
    v_iou = v_inter / v_union if v_union > 0 else 0.0
    return plan_iou * v_iou


def _plan_bounds(b: OrientedCuboid) -> tuple[np.ndarray, np.ndarray]:
    from .geometry import plan_view_footprint

    fp = plan_view_footprint(b)
    return fp.min(axis=0), fp.max(axis=0)


def _inside_plan(cells: np.ndarray, b: OrientedCuboid) -> np.ndarray:
    q = b.to_canonical(np.column_stack([cells, np.zeros(len(cells))]))
    return (np.abs(q[:, 0]) <= 0.5 * b.size[0]) & (np.abs(q[:, 1]) <= 0.5 * b.size[1])


def _camera_wedge_mask(cells: np.ndarray, camera: CameraPose, K: CameraIntrinsics) -> np.ndarray:
    center = camera.camera_center()
    fwd = camera.rotation.T @ np.array([0.0, 0.0, 1.0])
    fwd2 = fwd[:2]
    norm = np.linalg.norm(fwd2)
    if norm < 1e-9:  # camera looks straight up/down: no horizontal wedge
        return np.ones(len(cells), dtype=bool)
    fwd2 = fwd2 / norm
    half_fov = math.atan2(K.cx, K.fx)
    rel = cells - center[:2]
    rnorm = np.linalg.norm(rel, axis=1)
    cosang = np.where(rnorm > 1e-9, (rel @ fwd2) / np.where(rnorm > 1e-9, rnorm, 1.0), 1.0)
    return cosang >= math.cos(half_fov)


def layout_loss(
    gt: OrientedCuboid, hyp: OrientedCuboid, camera: CameraPose, K: CameraIntrinsics
) -> float:
    """1 - FreeSpaceIOU * (1 + cos(4 dtheta)) / 2; yaw modulo 90 degrees."""
    fs = free_space_iou(gt, hyp, camera, K)
    orient = 0.5 * (1.0 + math.cos(4.0 * (hyp.yaw - gt.yaw)))
    return 1.0 - fs * orient
