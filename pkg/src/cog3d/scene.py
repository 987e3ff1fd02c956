"""Scene container format and dataset manifests.

Container layout (little-endian):
  bytes 0..7   magic  b"COG3DSCN"
  bytes 8..9   version (u16), currently 1
  bytes 10..13 header length (u32)
  header       UTF-8 JSON: scene metadata plus a block table with
               per-block (name, offset, size); offsets are relative to
               the first byte after the header
  data         raw block bytes (rgb: H*W*3 u8; depth: H*W u16 le, mm)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import Malformed, VersionMismatch
from .geometry import CameraIntrinsics, CameraPose, OrientedCuboid

MAGIC = b"COG3DSCN"
VERSION = 1


@dataclass
class LayoutAnnotation:
    """Plan-view room polygon with floor/ceiling heights."""

    polygon: np.ndarray  # (n, 2) plan-view vertices, CCW
    floor_z: float
    ceil_z: float

    def to_cuboid(self) -> OrientedCuboid:
        """Oriented-cuboid equivalent of a rectangular layout: yaw from the
        first polygon edge, extents from the edge lengths."""
        poly = np.asarray(self.polygon, dtype=np.float64)
        if len(poly) != 4:
            raise ValueError("layout polygon must be a quad")
        center_xy = poly.mean(axis=0)
        e0 = poly[1] - poly[0]
        e1 = poly[2] - poly[1]
        return OrientedCuboid(
            center=(center_xy[0], center_xy[1], (self.floor_z + self.ceil_z) / 2.0),
            yaw=float(np.arctan2(e0[1], e0[0])),
            size=(
                float(np.linalg.norm(e0)),
                float(np.linalg.norm(e1)),
                self.ceil_z - self.floor_z,
            ),
        )


@dataclass
class SceneRecord:
    """One RGB-D observation with ground-truth cuboids and layout."""

    scene_id: str
    rgb: np.ndarray  # (H, W, 3) uint8
    depth_mm: np.ndarray  # (H, W) uint16, 0 = invalid
    intrinsics: CameraIntrinsics
    pose: CameraPose
    annotations: list[tuple[str, OrientedCuboid]] = field(default_factory=list)
    layout: LayoutAnnotation | None = None

    def __post_init__(self):
        if self.rgb.shape[:2] != self.depth_mm.shape:
            raise ValueError("rgb and depth dimensions must match")

    def depth_meters(self) -> np.ndarray:
        return self.depth_mm.astype(np.float64) / 1000.0

    def layout_cuboid(self) -> OrientedCuboid:
        if self.layout is None:
            raise ValueError(f"scene {self.scene_id} has no layout annotation")
        return self.layout.to_cuboid()


def _pose_to_json(pose: CameraPose) -> dict:
    return {"rotation": pose.rotation.reshape(-1).tolist(),
            "translation": pose.translation.tolist()}


def _pose_from_json(d: dict) -> CameraPose:
    return CameraPose(np.array(d["rotation"]).reshape(3, 3), np.array(d["translation"]))


def _cuboid_to_json(b: OrientedCuboid) -> dict:
    return {"center": b.center.tolist(), "yaw": b.yaw, "size": list(b.size)}


def _cuboid_from_json(d: dict) -> OrientedCuboid:
    return OrientedCuboid(np.array(d["center"]), d["yaw"], tuple(d["size"]))


def save_scene(record: SceneRecord, path: str | Path) -> None:
    h, w = record.depth_mm.shape
    rgb_bytes = np.ascontiguousarray(record.rgb, dtype=np.uint8).tobytes()
    depth_bytes = np.ascontiguousarray(record.depth_mm, dtype="<u2").tobytes()
    blocks = [("rgb", rgb_bytes), ("depth", depth_bytes)]
    table = []
    off = 0
    for name, data in blocks:
        table.append({"name": name, "offset": off, "size": len(data)})
        off += len(data)
    k = record.intrinsics
    header = {
        "scene_id": record.scene_id,
        "width": w,
        "height": h,
        "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy},
        "pose": _pose_to_json(record.pose),
        "annotations": [
            {"category": c, **_cuboid_to_json(b)} for c, b in record.annotations
        ],
        "layout": None
        if record.layout is None
        else {
            "polygon": np.asarray(record.layout.polygon, dtype=np.float64).tolist(),
            "floor_z": record.layout.floor_z,
            "ceil_z": record.layout.ceil_z,
        },
        "blocks": table,
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HI", VERSION, len(hdr)))
        f.write(hdr)
        for _, data in blocks:
            f.write(data)


def load_scene(path: str | Path) -> SceneRecord:
    raw = Path(path).read_bytes()
    if len(raw) < 14 or raw[:8] != MAGIC:
        raise Malformed(f"{path}: bad magic or truncated preamble")
    version, hdr_len = struct.unpack("<HI", raw[8:14])
    if version != VERSION:
        raise VersionMismatch(f"{path}: unsupported container version {version}")
    if len(raw) < 14 + hdr_len:
        raise Malformed(f"{path}: truncated header")
    try:
        header = json.loads(raw[14 : 14 + hdr_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise Malformed(f"{path}: bad header ({e})") from e
    data = raw[14 + hdr_len :]
    blocks = {}
    for entry in header["blocks"]:
        lo, hi = entry["offset"], entry["offset"] + entry["size"]
        if hi > len(data):
            raise Malformed(f"{path}: truncated block {entry['name']}")
        blocks[entry["name"]] = data[lo:hi]
    w, h = header["width"], header["height"]
    try:
        rgb = np.frombuffer(blocks["rgb"], dtype=np.uint8).reshape(h, w, 3).copy()
        depth = np.frombuffer(blocks["depth"], dtype="<u2").reshape(h, w).copy()
    except (KeyError, ValueError) as e:
        raise Malformed(f"{path}: bad block data ({e})") from e
    ki = header["intrinsics"]
    layout = None
    if header.get("layout") is not None:
        lj = header["layout"]
        layout = LayoutAnnotation(np.array(lj["polygon"]), lj["floor_z"], lj["ceil_z"])
    return SceneRecord(
        scene_id=header["scene_id"],
        rgb=rgb,
        depth_mm=depth,
        intrinsics=CameraIntrinsics(ki["fx"], ki["fy"], ki["cx"], ki["cy"]),
        pose=_pose_from_json(header["pose"]),
        annotations=[
            (a["category"], _cuboid_from_json(a)) for a in header["annotations"]
        ],
        layout=layout,
    )


def save_manifest(entries: list[tuple[str, str, str]], path: str | Path) -> None:
    """Write (scene_id, split, relative path) rows as tab-separated lines."""
    seen = set()
    lines = []
    for scene_id, split, rel in entries:
        if scene_id in seen:
            raise Malformed(f"duplicate scene id {scene_id!r}")
        seen.add(scene_id)
        lines.append(f"{scene_id}\t{split}\t{rel}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_manifest(path: str | Path) -> list[tuple[str, str, Path]]:
    base = Path(path).parent
    out = []
    seen = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise Malformed(f"bad manifest line: {line!r}")
        scene_id, split, rel = parts
        if scene_id in seen:
            raise Malformed(f"duplicate scene id {scene_id!r}")
        seen.add(scene_id)
        out.append((scene_id, split, base / rel))
    return out
