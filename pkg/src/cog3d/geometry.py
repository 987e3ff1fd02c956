"""Exact geometry for gravity-aligned oriented cuboids.

World frame convention: +z is up. A camera pose is the world-to-camera
extrinsic (p_cam = R @ p_world + t) with camera axes x right, y down,
z forward. Cuboid centers are 3D centroids; yaw rotates about +z.

Polygon clipping runs on a compiled kernel when available, with a
pure-Python fallback selected at import (see ``CLIP_BACKEND``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera

try:  # pragma: no cover - depends on build environment
    from . import _polyclip as _clip
except ImportError:  # pragma: no cover
    from . import _polyclip_py as _clip

CLIP_BACKEND: str = _clip.BACKEND

clip_convex = _clip.clip_convex
polygon_area = _clip.polygon_area
rect_overlap_area = _clip.rect_overlap_area


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera extrinsic: p_cam = rotation @ p_world + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def camera_center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return p @ self.rotation.T + self.translation

    def to_world(self, points_cam: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points_cam, dtype=np.float64))
        return (p - self.translation) @ self.rotation


@dataclass(frozen=True)
class OrientedCuboid:
    """3D box (L, theta, S, y): centroid, yaw about +z, per-axis size, presence."""

    center: np.ndarray
    yaw: float
    size: tuple[float, float, float]  # (width, depth, height)
    present: bool = True

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        s = tuple(float(v) for v in self.size)
        if any(v <= 0 for v in s):
            raise ValueError("size components must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)
        object.__setattr__(self, "yaw", float(self.yaw) % (2.0 * math.pi))

    @property
    def volume(self) -> float:
        w, d, h = self.size
        return w * d * h

    def axes(self) -> np.ndarray:
        """Rows: canonical x (width), y (depth), z (up) axes in world frame."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])

    def to_canonical(self, points: np.ndarray) -> np.ndarray:
        """World points -> cuboid frame (origin at centroid, yaw removed)."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return (p - self.center) @ self.axes().T

    def to_world(self, points_local: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points_local, dtype=np.float64))
        return p @ self.axes() + self.center

    def z_interval(self) -> tuple[float, float]:
        h = self.size[2]
        return (self.center[2] - 0.5 * h, self.center[2] + 0.5 * h)


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def project_points(points: np.ndarray, K: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """Pinhole projection of world points; raises BehindCamera on depth <= 0."""
    cam = pose.to_camera(points)
    z = cam[:, 2]
    if np.any(z <= 0):
        raise BehindCamera("point has non-positive camera-frame depth")
    return np.column_stack((K.fx * cam[:, 0] / z + K.cx, K.fy * cam[:, 1] / z + K.cy))


def project_point(p, K: CameraIntrinsics, pose: CameraPose) -> tuple[float, float]:
    uv = project_points(np.asarray(p, dtype=np.float64).reshape(1, 3), K, pose)[0]
    return float(uv[0]), float(uv[1])


_UNIT_CORNERS = np.array(
    [
        [-0.5, -0.5, -0.5],
        [0.5, -0.5, -0.5],
        [0.5, 0.5, -0.5],
        [-0.5, 0.5, -0.5],
        [-0.5, -0.5, 0.5],
        [0.5, -0.5, 0.5],
        [0.5, 0.5, 0.5],
        [-0.5, 0.5, 0.5],
    ]
)


def cuboid_corners(b: OrientedCuboid) -> np.ndarray:
    """(8, 3) world-frame corners; bottom face first, CCW in plan view."""
    return b.to_world(_UNIT_CORNERS * np.array(b.size))


def plan_view_footprint(b: OrientedCuboid) -> np.ndarray:
    """CCW (4, 2) plan-view rectangle of size (width, depth) at (L.x, L.y)."""
    corners = cuboid_corners(b)
    return corners[:4, :2]


def footprint_overlap_area(a: OrientedCuboid, b: OrientedCuboid) -> float:
    # Clipping is asymmetric at rounding precision; fix a canonical
    # argument order so the overlap (and hence IOU) is exactly symmetric.
    ka = (a.center[0], a.center[1], a.size[0], a.size[1], a.yaw)
    kb = (b.center[0], b.center[1], b.size[0], b.size[1], b.yaw)
    if kb < ka:
        ka, kb = kb, ka
    return rect_overlap_area(*ka, *kb)


def cuboid_intersection_volume(a: OrientedCuboid, b: OrientedCuboid) -> float:
    """Shared-gravity-axis intersection: plan overlap area x vertical overlap."""
    za0, za1 = a.z_interval()
    zb0, zb1 = b.z_interval()
    dz = min(za1, zb1) - max(za0, zb0)
    if dz <= 0.0:
        return 0.0
    area = footprint_overlap_area(a, b)
    return area * dz


def cuboid_iou_3d(a: OrientedCuboid, b: OrientedCuboid) -> float:
    inter = cuboid_intersection_volume(a, b)
    union = a.volume + b.volume - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def detection_loss(gt: OrientedCuboid | None, hyp: OrientedCuboid | None) -> float:
    """Structured detection loss in [0, 1].

    With a present ground truth and a present hypothesis:
    1 - IOU * (1 + cos(dtheta)) / 2. Correct absence scores 0; any
    presence mismatch scores 1.
    """
    gt_present = gt is not None and gt.present
    hyp_present = hyp is not None and hyp.present
    if not gt_present:
        return 0.0 if not hyp_present else 1.0
    if not hyp_present:
        return 1.0
    iou = cuboid_iou_3d(gt, hyp)
    orient = 0.5 * (1.0 + math.cos(hyp.yaw - gt.yaw))
    return 1.0 - iou * orient
