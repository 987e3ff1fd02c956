"""Voxelized cuboid descriptors: point density, normal histograms, clouds of
oriented gradients, view-to-camera expansion, expanded grids, and latent
support-surface slices.

All per-voxel features are computed in the cuboid's canonical frame
(yaw removed, +z up) so that descriptors align across 3D viewpoints.
Voxels are indexed (ix, iy, iz) and flattened in C order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import CameraIntrinsics, CameraPose, OrientedCuboid
from .pointcloud import (
    GradientImage,
    ScenePointCloud,
    compute_gradients,
    depth_to_cloud,
    estimate_normals,
)
from .scene import SceneRecord

N_ORIENT_BINS = 9
N_NORMAL_BINS = 25
N_VIEW = 11
N_SURFACE_SLICES = 7
_BIN_DELTA = 0.01  # meters; finite-difference step for projected bin directions
_BIN_ANGLES = np.arange(N_ORIENT_BINS) * (math.pi / N_ORIENT_BINS)


@dataclass(frozen=True)
class VoxelGridSpec:
    """Voxel counts, optionally with an expansion margin.

    nx/ny/nz are total counts. A nonzero margin means the outer `margin`
    layers per face extend beyond the cuboid being voxelized, at the same
    pitch as the inner cells. Keeping the inner cells defined by the
    original (unexpanded) cuboid makes the interior sub-block of expanded
    features bit-identical to the unexpanded features.
    """

    nx: int
    ny: int
    nz: int
    margin: int = 0

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise ValueError("voxel counts must be >= 1")
        if self.margin < 0 or 2 * self.margin >= min(self.nx, self.ny, self.nz):
            raise ValueError("margin must be >= 0 and leave interior cells")

    @property
    def count(self) -> int:
        return self.nx * self.ny * self.nz

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    def base_counts(self) -> np.ndarray:
        """Cell counts of the inner (margin-free) region per axis."""
        return np.array([self.nx, self.ny, self.nz]) - 2 * self.margin


GRID_INTERIOR = VoxelGridSpec(5, 5, 5)
GRID_EXPANDED = VoxelGridSpec(7, 7, 7, margin=1)
GRID_SURFACE = VoxelGridSpec(5, 5, 7)


@dataclass(frozen=True)
class FeatureConfig:
    """Which descriptor blocks to compute, and on which grid."""

    use_geometry: bool = True
    use_cog: bool = True
    use_view: bool = True
    expanded: bool = True
    latent: bool = False
    grid: VoxelGridSpec = GRID_INTERIOR
    cog_eps: float = 1e-4

    def block_length(self) -> int:
        """Per-voxel feature width."""
        n = 0
        if self.use_geometry:
            n += 1 + N_NORMAL_BINS
        if self.use_cog:
            n += N_ORIENT_BINS
        return n

    def feature_length(self) -> int:
        grid = expanded_grid(self.grid) if self.expanded else self.grid
        n = grid.count * self.block_length()
        if self.use_view:
            n += N_VIEW
        if self.latent:
            n += self.grid.nx * self.grid.ny * self.block_length() + N_SURFACE_SLICES
        return n


def expanded_grid(grid: VoxelGridSpec) -> VoxelGridSpec:
    return VoxelGridSpec(grid.nx + 2, grid.ny + 2, grid.nz + 2, grid.margin + 1)


def expand_cuboid(b: OrientedCuboid, grid: VoxelGridSpec) -> OrientedCuboid:
    """Grow by one voxel pitch per face; interior voxels keep their size."""
    w, d, h = b.size
    return replace(
        b,
        size=(
            w * (grid.nx + 2) / grid.nx,
            d * (grid.ny + 2) / grid.ny,
            h * (grid.nz + 2) / grid.nz,
        ),
    )


@dataclass
class SceneContext:
    """Shared read-only per-scene inputs for feature extraction."""

    cloud: ScenePointCloud  # with normals
    gradients: GradientImage
    intrinsics: CameraIntrinsics
    pose: CameraPose

    @classmethod
    def from_record(cls, record: SceneRecord, normal_k: int = 15) -> "SceneContext":
        cloud = depth_to_cloud(record.depth_meters(), record.intrinsics, record.pose)
        cloud = estimate_normals(cloud, k=normal_k)
        grads = compute_gradients(record.rgb)
        return cls(cloud=cloud, gradients=grads, intrinsics=record.intrinsics, pose=record.pose)

    def without_points(self, mask: np.ndarray) -> "SceneContext":
        """Copy with the masked points removed (multi-instance training)."""
        keep = ~mask
        cloud = ScenePointCloud(
            points=self.cloud.points[keep],
            pixels=self.cloud.pixels[keep],
            camera_center=self.cloud.camera_center,
            normals=None if self.cloud.normals is None else self.cloud.normals[keep],
        )
        return SceneContext(cloud, self.gradients, self.intrinsics, self.pose)


def assign_points_to_voxels(
    points: np.ndarray, b: OrientedCuboid, grid: VoxelGridSpec
) -> np.ndarray:
    """Flat voxel index per point; -1 for points outside the cuboid."""
    q = b.to_canonical(points)
    size = np.array(b.size)
    frac = q / size + 0.5
    base = grid.base_counts()
    dims = np.array(grid.as_tuple())
    idx = np.floor(frac * base).astype(np.int64) + grid.margin
    inside = np.all((idx >= 0) & (idx < dims), axis=1) & np.all(
        frac >= -grid.margin / base, axis=1
    )
    flat = (idx[:, 0] * grid.ny + idx[:, 1]) * grid.nz + idx[:, 2]
    return np.where(inside, flat, -1)


def voxel_centers(b: OrientedCuboid, grid: VoxelGridSpec) -> np.ndarray:
    """(count, 3) world-frame voxel centers, C-order over (ix, iy, iz)."""
    size = np.array(b.size)
    m = grid.margin
    ax = [
        ((np.arange(n) - m + 0.5) / (n - 2 * m) - 0.5) for n in grid.as_tuple()
    ]
    gx, gy, gz = np.meshgrid(*ax, indexing="ij")
    local = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()]) * size
    return b.to_world(local)


_CORNER_OFFSETS = np.array(
    [[sx, sy, sz] for sx in (-0.5, 0.5) for sy in (-0.5, 0.5) for sz in (-0.5, 0.5)]
)
# Box faces as corner indices into _CORNER_OFFSETS, each a planar quad.
_FACES = np.array(
    [
        [0, 1, 3, 2],  # -x
        [4, 6, 7, 5],  # +x
        [0, 4, 5, 1],  # -y
        [2, 3, 7, 6],  # +y
        [0, 2, 6, 4],  # -z
        [1, 5, 7, 3],  # +z
    ]
)


def voxel_silhouette_areas(
    b: OrientedCuboid, grid: VoxelGridSpec, K: CameraIntrinsics, pose: CameraPose
) -> np.ndarray:
    """Projected silhouette area (pixels^2) per voxel.

    For a convex solid with all vertices in front of the camera, each
    silhouette point is covered once by front faces and once by back faces,
    so the area equals half the sum of absolute projected face areas.
    Voxels with any corner at camera depth <= 0 get area 0.
    """
    centers = voxel_centers(b, grid)
    pitch = np.array(b.size) / grid.base_counts()
    corners = centers[:, None, :] + (_CORNER_OFFSETS * pitch)[None, :, :]  # (n, 8, 3)
    n = len(centers)
    cam = pose.to_camera(corners.reshape(-1, 3)).reshape(n, 8, 3)
    valid = np.all(cam[:, :, 2] > 1e-9, axis=1)
    z = np.where(cam[:, :, 2] > 1e-9, cam[:, :, 2], 1.0)
    u = K.fx * cam[:, :, 0] / z + K.cx
    v = K.fy * cam[:, :, 1] / z + K.cy
    fu = u[:, _FACES]  # (n, 6, 4)
    fv = v[:, _FACES]
    shoelace = np.sum(
        fu * np.roll(fv, -1, axis=2) - np.roll(fu, -1, axis=2) * fv, axis=2
    )
    areas = 0.25 * np.sum(np.abs(shoelace), axis=1)
    return np.where(valid, areas, 0.0)


def density_feature(
    voxel_counts: np.ndarray,
    b: OrientedCuboid,
    grid: VoxelGridSpec,
    K: CameraIntrinsics,
    pose: CameraPose,
) -> np.ndarray:
    """Point count divided by projected voxel silhouette area (N/A)."""
    areas = voxel_silhouette_areas(b, grid, K, pose)
    out = np.zeros(grid.count)
    ok = areas > 0
    out[ok] = voxel_counts[ok] / areas[ok]
    return out


def normal_bin_directions() -> np.ndarray:
    """(25, 3) unit bin directions: 5 azimuths x 5 elevations, upper hemisphere."""
    az = 2.0 * math.pi * np.arange(5) / 5.0
    el = (np.arange(5) + 0.5) * (math.pi / 2.0) / 5.0
    a, e = np.meshgrid(az, el, indexing="ij")
    return np.column_stack(
        [np.cos(e).ravel() * np.cos(a).ravel(), np.cos(e).ravel() * np.sin(a).ravel(), np.sin(e).ravel()]
    )


_NORMAL_BINS = normal_bin_directions()


def normal_histogram_feature(
    normals: np.ndarray, voxel_idx: np.ndarray, b: OrientedCuboid, grid: VoxelGridSpec
) -> np.ndarray:
    """(count, 25) hard-assigned histogram of canonical-frame normals."""
    hist = np.zeros((grid.count, N_NORMAL_BINS))
    inside = voxel_idx >= 0
    if not inside.any():
        return hist
    local = normals[inside] @ b.axes().T
    # Fold into the upper hemisphere (sign of a plane normal is arbitrary).
    flip = local[:, 2] < 0
    local[flip] *= -1.0
    bins = np.argmax(local @ _NORMAL_BINS.T, axis=1)
    np.add.at(hist, (voxel_idx[inside], bins), 1.0)
    return hist


def orientation_bin_dirs_world(b: OrientedCuboid) -> np.ndarray:
    """(9, 3) world directions of the canonical orientation bins.

    Bin j lies in the plane spanned by the cuboid width axis and the
    gravity axis, at angle j * 20 deg from the width axis.
    """
    x_axis = b.axes()[0]
    z_axis = np.array([0.0, 0.0, 1.0])
    return np.outer(np.cos(_BIN_ANGLES), x_axis) + np.outer(np.sin(_BIN_ANGLES), z_axis)


def projected_bin_angles(
    b: OrientedCuboid, grid: VoxelGridSpec, K: CameraIntrinsics, pose: CameraPose
) -> tuple[np.ndarray, np.ndarray]:
    """Image-plane angles in [0, pi) of each bin at each voxel center.

    Returns (angles (count, 9), valid (count,)). Directions are obtained by
    projecting a short segment anchored at the voxel center; the image
    y-axis is negated so angles use the same y-up convention as
    GradientImage orientations.
    """
    centers = voxel_centers(b, grid)
    dirs = orientation_bin_dirs_world(b)
    ends = centers[:, None, :] + _BIN_DELTA * dirs[None, :, :]  # (n, 9, 3)
    n = len(centers)
    cam_c = pose.to_camera(centers)
    cam_e = pose.to_camera(ends.reshape(-1, 3)).reshape(n, N_ORIENT_BINS, 3)
    valid = (cam_c[:, 2] > 1e-9) & np.all(cam_e[:, :, 2] > 1e-9, axis=1)
    zc = np.where(cam_c[:, 2] > 1e-9, cam_c[:, 2], 1.0)[:, None]
    ze = np.where(cam_e[:, :, 2] > 1e-9, cam_e[:, :, 2], 1.0)
    uc = K.fx * cam_c[:, 0][:, None] / zc + K.cx
    vc = K.fy * cam_c[:, 1][:, None] / zc + K.cy
    ue = K.fx * cam_e[:, :, 0] / ze + K.cx
    ve = K.fy * cam_e[:, :, 1] / ze + K.cy
    du = ue - uc
    dv = ve - vc
    angles = np.mod(np.arctan2(-dv, du), math.pi)
    return angles, valid


def _angular_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.abs(a - b) % math.pi
    return np.minimum(d, math.pi - d)


def cog_feature(
    gradients: GradientImage,
    pixels: np.ndarray,
    voxel_idx: np.ndarray,
    b: OrientedCuboid,
    grid: VoxelGridSpec,
    K: CameraIntrinsics,
    pose: CameraPose,
    eps: float = 1e-4,
) -> np.ndarray:
    """(count, 9) cloud-of-oriented-gradients block.

    Each contributing pixel's gradient magnitude is split between the two
    angularly nearest projected bins of its voxel; per-voxel blocks are
    normalized by sqrt(||.||^2 + eps). Voxels behind the camera or without
    contributing pixels stay zero.
    """
    feat = np.zeros((grid.count, N_ORIENT_BINS))
    inside = voxel_idx >= 0
    if not inside.any():
        return feat
    angles, valid = projected_bin_angles(b, grid, K, pose)
    vox = voxel_idx[inside]
    px = pixels[inside]
    omega = gradients.orientation[px[:, 0], px[:, 1]]
    mag = gradients.magnitude[px[:, 0], px[:, 1]]
    ok = valid[vox] & (mag > 0)
    if ok.any():
        vox = vox[ok]
        omega = omega[ok]
        mag = mag[ok]
        d = _angular_distance(omega[:, None], angles[vox])  # (m, 9)
        order = np.argsort(d, axis=1, kind="stable")
        j1 = order[:, 0]
        j2 = order[:, 1]
        rows = np.arange(len(vox))
        d1 = d[rows, j1]
        d2 = d[rows, j2]
        tot = d1 + d2
        w1 = np.where(tot > 0, d2 / np.where(tot > 0, tot, 1.0), 1.0)
        w2 = 1.0 - w1
        np.add.at(feat, (vox, j1), mag * w1)
        np.add.at(feat, (vox, j2), mag * w2)
    norms = np.sqrt(np.sum(feat * feat, axis=1) + eps)
    nonzero = np.any(feat != 0, axis=1)
    feat[nonzero] /= norms[nonzero, None]
    return feat


def view_to_camera_feature(b: OrientedCuboid, pose: CameraPose) -> np.ndarray:
    """11 radial basis values of the front-direction/viewing-angle cosine.

    Centers are evenly spaced on [-1, 1] with step 0.2, sigma = 0.5. A
    degenerate (zero-length) horizontal ray maps to cosine 1.
    """
    cam = pose.camera_center()
    ray = b.center[:2] - cam[:2]
    norm = np.linalg.norm(ray)
    if norm < 1e-9:
        x = 1.0
    else:
        front = b.axes()[0][:2]
        x = float(np.dot(front, ray / norm))
    mu = np.linspace(-1.0, 1.0, N_VIEW)
    return np.exp(-((x - mu) ** 2) / (2.0 * 0.5**2))


@dataclass
class CuboidFeatureVector:
    """Per-block descriptor arrays for one cuboid hypothesis.

    Concatenation order is block-major: density, normal histograms, COG,
    view-to-camera, then (optionally) the surface slice block and its
    one-hot height indicator.
    """

    density: np.ndarray | None  # (count,)
    normals: np.ndarray | None  # (count, 25)
    cog: np.ndarray | None  # (count, 9)
    view: np.ndarray | None  # (11,)
    surface: np.ndarray | None = None  # flat slice block + 7-dim one-hot

    def concat(self) -> np.ndarray:
        parts = []
        for block in (self.density, self.normals, self.cog, self.view, self.surface):
            if block is not None:
                parts.append(np.asarray(block).reshape(-1))
        return np.concatenate(parts)


def extract_voxel_blocks(
    ctx: SceneContext, b: OrientedCuboid, grid: VoxelGridSpec, config: FeatureConfig
) -> CuboidFeatureVector:
    """Per-voxel blocks on one grid (no view / surface blocks)."""
    voxel_idx = assign_points_to_voxels(ctx.cloud.points, b, grid)
    density = normals = cog = None
    if config.use_geometry:
        counts = np.bincount(voxel_idx[voxel_idx >= 0], minlength=grid.count).astype(np.float64)
        density = density_feature(counts, b, grid, ctx.intrinsics, ctx.pose)
        normals = normal_histogram_feature(ctx.cloud.normals, voxel_idx, b, grid)
    if config.use_cog:
        cog = cog_feature(
            ctx.gradients,
            ctx.cloud.pixels,
            voxel_idx,
            b,
            grid,
            ctx.intrinsics,
            ctx.pose,
            eps=config.cog_eps,
        )
    return CuboidFeatureVector(density=density, normals=normals, cog=cog, view=None)


def surface_slice_feature(
    ctx: SceneContext, b: OrientedCuboid, h: int, config: FeatureConfig
) -> np.ndarray:
    """Features of the h-th (1-based, from the bottom) vertical slice of the
    cuboid voxelized at nx x ny x 7, plus a one-hot height indicator."""
    grid = VoxelGridSpec(config.grid.nx, config.grid.ny, N_SURFACE_SLICES)
    blocks = extract_voxel_blocks(ctx, b, grid, config)
    return surface_slice_from_blocks(blocks, grid, h)


def surface_slice_from_blocks(
    blocks: "CuboidFeatureVector", grid: VoxelGridSpec, h: int
) -> np.ndarray:
    """Slice extraction given precomputed nx x ny x 7 voxel blocks (lets
    callers evaluate all seven heights without re-voxelizing)."""
    if not 1 <= h <= N_SURFACE_SLICES:
        raise ValueError(f"slice index must be in 1..{N_SURFACE_SLICES}")
    parts = []
    for block in (blocks.density, blocks.normals, blocks.cog):
        if block is None:
            continue
        cube = block.reshape(grid.nx, grid.ny, grid.nz, -1)
        parts.append(cube[:, :, h - 1, :].reshape(-1))
    onehot = np.zeros(N_SURFACE_SLICES)
    onehot[h - 1] = 1.0
    parts.append(onehot)
    return np.concatenate(parts)


def extract_features(
    ctx: SceneContext, b: OrientedCuboid, config: FeatureConfig, h: int | None = None
) -> CuboidFeatureVector:
    """All descriptor blocks for one cuboid hypothesis."""
    grid = config.grid
    vgrid = expanded_grid(grid) if config.expanded else grid
    fv = extract_voxel_blocks(ctx, b, vgrid, config)
    if config.use_view:
        fv.view = view_to_camera_feature(b, ctx.pose)
    if config.latent:
        if h is None:
            raise ValueError("latent config requires a slice index h")
        fv.surface = surface_slice_feature(ctx, b, h, config)
    return fv


def cuboid_feature_vector(
    ctx: SceneContext, b: OrientedCuboid, config: FeatureConfig, h: int | None = None
) -> np.ndarray:
    """Full concatenated feature vector for one cuboid hypothesis."""
    return extract_features(ctx, b, config, h=h).concat()
