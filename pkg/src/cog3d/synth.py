"""Procedural synthetic RGB-D scenes: ray-cast textured boxes in a box room.

Rooms are axis-aligned, centered at the plan origin, floor at z = 0.
Every render is deterministic given the spec (including its texture seed)
and carries exact ground-truth annotations by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpec
from .geometry import CameraIntrinsics, CameraPose, OrientedCuboid
from .scene import LayoutAnnotation, SceneRecord

_TEXTURES = ("checker", "stripes", "plain", "sine")


@dataclass
class PlacedObject:
    """A box resting on the floor (or on a parent's support surface).

    ``surface_frac`` sets the height of the rendered solid slab relative to
    the annotated cuboid height; the slab top acts as the support surface.
    """

    category: str
    size: tuple[float, float, float]
    position: tuple[float, float]
    yaw: float = 0.0
    surface_frac: float = 1.0
    texture: str = "checker"
    children: list["PlacedObject"] = field(default_factory=list)


@dataclass
class SyntheticSceneSpec:
    scene_id: str
    room: tuple[float, float, float]  # (width, depth, height), meters
    camera_eye: tuple[float, float, float]
    camera_target: tuple[float, float, float]
    objects: list[PlacedObject] = field(default_factory=list)
    image_size: tuple[int, int] = (160, 120)  # (width, height) pixels
    focal: float = 130.0
    texture_seed: int = 0


def look_at_pose(eye, target) -> CameraPose:
    """World-to-camera pose looking from eye toward target, +z-up world."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(fwd)
    if norm < 1e-9:
        raise InvalidSpec("camera eye and target coincide")
    fwd = fwd / norm
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, up)
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-9:
        raise InvalidSpec("camera cannot look straight up or down")
    right = right / rnorm
    down = np.cross(fwd, right)
    rot = np.vstack([right, down, fwd])
    return CameraPose(rot, -rot @ eye)


def _validate(spec: SyntheticSceneSpec) -> None:
    rw, rd, rh = spec.room
    if min(rw, rd, rh) <= 0:
        raise InvalidSpec("room dimensions must be positive")
    ex, ey, ez = spec.camera_eye
    if not (abs(ex) < rw / 2 and abs(ey) < rd / 2 and 0 < ez < rh):
        raise InvalidSpec("camera must be inside the room")
    for obj in spec.objects:
        _validate_object(obj, spec)


def _validate_object(obj: PlacedObject, spec: SyntheticSceneSpec) -> None:
    rw, rd, _ = spec.room
    if min(obj.size) <= 0:
        raise InvalidSpec(f"{obj.category}: sizes must be positive")
    if not 0 < obj.surface_frac <= 1:
        raise InvalidSpec(f"{obj.category}: surface_frac must be in (0, 1]")
    if obj.texture not in _TEXTURES:
        raise InvalidSpec(f"{obj.category}: unknown texture {obj.texture!r}")
    x, y = obj.position
    half = 0.5 * max(obj.size[0], obj.size[1])
    if abs(x) + half > rw / 2 + 1e-9 or abs(y) + half > rd / 2 + 1e-9:
        raise InvalidSpec(f"{obj.category}: object extends outside the room")
    for child in obj.children:
        if min(child.size) <= 0:
            raise InvalidSpec(f"{child.category}: sizes must be positive")
        if child.texture not in _TEXTURES:
            raise InvalidSpec(f"{child.category}: unknown texture {child.texture!r}")


def _solid_boxes(spec: SyntheticSceneSpec):
    """Flatten the object tree into rendered slabs plus full annotations."""
    solids = []  # (OrientedCuboid solid, texture, category)
    annos = []  # (category, OrientedCuboid full-size)
    for obj in spec.objects:
        w, d, h = obj.size
        x, y = obj.position
        solid_h = obj.surface_frac * h
        solids.append(
            (
                OrientedCuboid((x, y, solid_h / 2), obj.yaw, (w, d, solid_h)),
                obj.texture,
                obj.category,
            )
        )
        annos.append((obj.category, OrientedCuboid((x, y, h / 2), obj.yaw, (w, d, h))))
        top = solid_h
        for child in obj.children:
            cw, cd, ch = child.size
            cx, cy = child.position
            box = OrientedCuboid((cx, cy, top + ch / 2), child.yaw, (cw, cd, ch))
            solids.append((box, child.texture, child.category))
            annos.append((child.category, box))
    return solids, annos


def _texture_colors(rng: np.random.Generator, n: int) -> np.ndarray:
    """Two contrasting RGB colors per surface, (n, 2, 3) uint8."""
    base = rng.integers(40, 216, size=(n, 3))
    alt = 255 - base
    return np.stack([base, alt], axis=1).astype(np.uint8)


def _shade(kind: str, u: np.ndarray, v: np.ndarray, colors: np.ndarray) -> np.ndarray:
    period = 0.25
    if kind == "sine":
        # Smooth gradient field: intensity varies sinusoidally along u, so
        # every surface pixel carries a gradient aligned with the surface.
        t = 0.5 + 0.5 * np.sin(2.0 * np.pi * u / period)
        lo = colors[0].astype(np.float64)
        hi = colors[1].astype(np.float64)
        return (lo[None] * (1.0 - t[..., None]) + hi[None] * t[..., None]).astype(
            np.uint8
        )
    if kind == "plain":
        sel = np.zeros(u.shape, dtype=np.int64)
    elif kind == "stripes":
        sel = np.floor_divide(u, period).astype(np.int64) % 2
    else:  # checker
        sel = (
            np.floor_divide(u, period).astype(np.int64)
            + np.floor_divide(v, period).astype(np.int64)
        ) % 2
    return colors[sel]


def synthesize_scene(spec: SyntheticSceneSpec) -> SceneRecord:
    _validate(spec)
    rng = np.random.default_rng(spec.texture_seed)
    pose = look_at_pose(spec.camera_eye, spec.camera_target)
    wpx, hpx = spec.image_size
    K = CameraIntrinsics(spec.focal, spec.focal, wpx / 2.0, hpx / 2.0)

    cols, rows = np.meshgrid(np.arange(wpx), np.arange(hpx))
    # Rays go through integer pixel coordinates so that back-projected
    # clouds lie exactly on rendered surfaces.
    dir_cam = np.stack(
        [
            (cols - K.cx) / K.fx,
            (rows - K.cy) / K.fy,
            np.ones_like(cols, dtype=np.float64),
        ],
        axis=-1,
    ).reshape(-1, 3)
    dir_world = dir_cam @ pose.rotation  # R^T applied row-wise
    origin = pose.camera_center()
    npix = len(dir_world)

    best_t = np.full(npix, np.inf)
    best_color = np.zeros((npix, 3), dtype=np.uint8)

    rw, rd, rh = spec.room
    room_colors = _texture_colors(rng, 6)
    # Room shell: camera is inside, so each pixel hits the slab exit point.
    lo = np.array([-rw / 2, -rd / 2, 0.0])
    hi = np.array([rw / 2, rd / 2, rh])
    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = (lo - origin) / dir_world
        t_hi = (hi - origin) / dir_world
    t_far = np.where(dir_world > 0, t_hi, np.where(dir_world < 0, t_lo, np.inf))
    exit_axis = np.argmin(t_far, axis=1)
    t_exit = t_far[np.arange(npix), exit_axis]
    face = exit_axis * 2 + (dir_world[np.arange(npix), exit_axis] < 0)
    hit = origin + t_exit[:, None] * dir_world
    uv_axes = {0: (1, 2), 1: (0, 2), 2: (0, 1)}
    for f in range(6):
        mask = face == f
        if not mask.any():
            continue
        ua, va = uv_axes[f // 2]
        kind = "stripes" if f // 2 < 2 else "checker"
        best_color[mask] = _shade(kind, hit[mask, ua], hit[mask, va], room_colors[f])
        best_t[mask] = t_exit[mask]

    solids, annos = _solid_boxes(spec)
    for box, texture, _ in solids:
        colors = _texture_colors(rng, 1)[0]
        o_local = box.to_canonical(origin)[0]
        d_local = dir_world @ box.axes().T
        half = 0.5 * np.array(box.size)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half - o_local) / d_local
            t2 = (half - o_local) / d_local
        t_near = np.where(
            d_local != 0, np.minimum(t1, t2), np.where(np.abs(o_local) <= half, -np.inf, np.inf)
        )
        t_far_b = np.where(
            d_local != 0, np.maximum(t1, t2), np.where(np.abs(o_local) <= half, np.inf, -np.inf)
        )
        entry_axis = np.argmax(t_near, axis=1)
        t_entry = t_near[np.arange(npix), entry_axis]
        t_leave = np.min(t_far_b, axis=1)
        ok = (t_entry > 1e-6) & (t_entry < t_leave) & (t_entry < best_t)
        if not ok.any():
            continue
        p_local = o_local + t_entry[ok, None] * d_local[ok]
        ax = entry_axis[ok]
        u_axis = np.array([1, 0, 0])[ax]
        v_axis = np.array([2, 2, 1])[ax]
        sel = np.arange(len(p_local))
        u = p_local[sel, u_axis] + half[u_axis]
        v = p_local[sel, v_axis] + half[v_axis]
        best_color[ok] = _shade(texture, u, v, colors)
        best_t[ok] = t_entry[ok]

    depth_m = np.where(np.isfinite(best_t), best_t, 0.0)
    depth_mm = np.clip(np.round(depth_m * 1000.0), 0, 65535).astype(np.uint16)

    layout = LayoutAnnotation(
        polygon=np.array(
            [[-rw / 2, -rd / 2], [rw / 2, -rd / 2], [rw / 2, rd / 2], [-rw / 2, rd / 2]]
        ),
        floor_z=0.0,
        ceil_z=rh,
    )
    return SceneRecord(
        scene_id=spec.scene_id,
        rgb=best_color.reshape(hpx, wpx, 3),
        depth_mm=depth_mm.reshape(hpx, wpx),
        intrinsics=K,
        pose=pose,
        annotations=annos,
        layout=layout,
    )


def layout_cuboid(layout: LayoutAnnotation) -> OrientedCuboid:
    """Axis-aligned cuboid equivalent of a rectangular layout annotation."""
    poly = np.asarray(layout.polygon, dtype=np.float64)
    lo, hi = poly.min(axis=0), poly.max(axis=0)
    return OrientedCuboid(
        center=((lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (layout.floor_z + layout.ceil_z) / 2),
        yaw=0.0,
        size=(hi[0] - lo[0], hi[1] - lo[1], layout.ceil_z - layout.floor_z),
    )
