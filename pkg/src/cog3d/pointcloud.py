"""Depth back-projection, image gradients, and surface normal estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, ImageTooSmall, TooFewPoints
from .geometry import CameraIntrinsics, CameraPose


@dataclass
class ScenePointCloud:
    """World-frame points with their source pixels and optional normals.

    points: (n, 3) float64; pixels: (n, 2) int (row, col);
    normals: (n, 3) unit vectors oriented toward the camera, or None.
    """

    points: np.ndarray
    pixels: np.ndarray
    camera_center: np.ndarray
    normals: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class GradientImage:
    """Per-pixel unsigned gradient orientation in [0, pi) and magnitude >= 0.

    Orientation uses the y-up convention (atan2(-dy, dx) folded to [0, pi))
    so that image angles match world angles under projection.
    """

    orientation: np.ndarray
    magnitude: np.ndarray


def depth_to_cloud(depth: np.ndarray, K: CameraIntrinsics, pose: CameraPose) -> ScenePointCloud:
    """Back-project valid depth pixels (depth > 0, meters) to world points."""
    d = np.asarray(depth, dtype=np.float64)
    rows, cols = np.nonzero(d > 0)
    if len(rows) == 0:
        raise EmptyCloud("no valid depth pixels")
    z = d[rows, cols]
    x = (cols - K.cx) * z / K.fx
    y = (rows - K.cy) * z / K.fy
    cam = np.column_stack((x, y, z))
    pts = pose.to_world(cam)
    return ScenePointCloud(
        points=pts,
        pixels=np.column_stack((rows, cols)).astype(np.int64),
        camera_center=pose.camera_center(),
    )


def compute_gradients(rgb: np.ndarray) -> GradientImage:
    """[-1, 0, 1] filtering with per-pixel max-magnitude channel selection.

    Border pixels (undefined filter support) get zero magnitude.
    """
    img = np.asarray(rgb, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, _ = img.shape
    if h < 3 or w < 3:
        raise ImageTooSmall("need at least 3x3 pixels")
    dx = np.zeros(img.shape)
    dy = np.zeros(img.shape)
    dx[:, 1:-1, :] = img[:, 2:, :] - img[:, :-2, :]
    dy[1:-1, :, :] = img[2:, :, :] - img[:-2, :, :]
    mag = np.sqrt(dx * dx + dy * dy)
    best = np.argmax(mag, axis=2)
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    bdx = dx[ii, jj, best]
    bdy = dy[ii, jj, best]
    bmag = mag[ii, jj, best]
    bmag[0, :] = bmag[-1, :] = 0.0
    bmag[:, 0] = bmag[:, -1] = 0.0
    orient = np.mod(np.arctan2(-bdy, bdx), np.pi)
    orient[bmag == 0.0] = 0.0
    return GradientImage(orientation=orient, magnitude=bmag)


def estimate_normals(cloud: ScenePointCloud, k: int = 15) -> ScenePointCloud:
    """Per-point plane-fit normals from the k nearest Euclidean neighbors.

    The normal is the smallest-eigenvalue eigenvector of the neighborhood
    covariance, sign-flipped so it faces the camera.
    """
    pts = cloud.points
    n = len(pts)
    if n < k + 1:
        raise TooFewPoints(f"need at least {k + 1} points, got {n}")
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k + 1)
    neigh = pts[idx]  # (n, k+1, 3)
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    # eigh returns ascending eigenvalues; column 0 is the plane normal.
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    rays = pts - cloud.camera_center
    flip = np.einsum("ni,ni->n", normals, rays) > 0
    normals[flip] *= -1.0
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = normals / np.where(norms == 0, 1.0, norms)
    return ScenePointCloud(
        points=pts,
        pixels=cloud.pixels,
        camera_center=cloud.camera_center,
        normals=normals,
    )
