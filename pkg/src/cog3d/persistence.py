"""Versioned binary formats: detector / kernel model files and the cuboid
feature cache.

Model file layout: 8-byte magic, little-endian u16 version, u8 kind
(1 = linear, 2 = kernel), u32 header length, JSON header (category, grid
spec, config digest, array shapes), then float64 little-endian data
blocks in header order.

Feature cache layout: 8-byte magic, u16 version, u32 header length, JSON
header with the block-layout table, u32 entry count, then per entry a
length-prefixed UTF-8 key and a float32 little-endian vector.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict

import numpy as np

from .descriptors import FeatureConfig, VoxelGridSpec
from .errors import Malformed, MissingModel, VersionMismatch
from .learn import KernelSVMModel, LinearDetectorModel, TrainConfig

MODEL_MAGIC = b"COG3DMDL"
MODEL_VERSION = 1
CACHE_MAGIC = b"COG3DFTC"
CACHE_VERSION = 1


def config_digest(feature_config: FeatureConfig, train_config: TrainConfig) -> str:
    payload = json.dumps(
        {"feature": asdict(feature_config), "train": asdict(train_config)},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _write_container(path, kind: int, header: dict, blocks: list[np.ndarray]) -> None:
    hdr = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<HBI", MODEL_VERSION, kind, len(hdr)))
        f.write(hdr)
        for block in blocks:
            f.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def _read_container(path) -> tuple[int, dict, bytes]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except FileNotFoundError as e:
        raise MissingModel(f"model file not found: {path}") from e
    if len(data) < 15 or data[:8] != MODEL_MAGIC:
        raise Malformed(f"not a model file: {path}")
    version, kind, hlen = struct.unpack_from("<HBI", data, 8)
    if version != MODEL_VERSION:
        raise VersionMismatch(f"model version {version}, expected {MODEL_VERSION}")
    if len(data) < 15 + hlen:
        raise Malformed("truncated model header")
    try:
        header = json.loads(data[15 : 15 + hlen])
    except ValueError as e:
        raise Malformed(f"bad model header: {e}") from e
    return kind, header, data[15 + hlen :]


def save_linear_model(model: LinearDetectorModel, path) -> None:
    fc: FeatureConfig = model.feature_config
    header = {
        "category": model.category,
        "grid": [fc.grid.nx, fc.grid.ny, fc.grid.nz, fc.grid.margin],
        "feature_config": asdict(fc),
        "train_config": asdict(model.train_config),
        "digest": config_digest(fc, model.train_config),
        "bias": float(model.bias),
        "n_weights": int(len(model.weights)),
    }
    _write_container(path, 1, header, [model.weights])


def load_linear_model(path) -> LinearDetectorModel:
    kind, header, payload = _read_container(path)
    if kind != 1:
        raise Malformed("not a linear model file")
    n = header["n_weights"]
    if len(payload) < 8 * n:
        raise Malformed("truncated weight block")
    weights = np.frombuffer(payload[: 8 * n], dtype="<f8").copy()
    fc_dict = dict(header["feature_config"])
    fc_dict["grid"] = VoxelGridSpec(**fc_dict["grid"])
    return LinearDetectorModel(
        category=header["category"],
        weights=weights,
        bias=float(header["bias"]),
        feature_config=FeatureConfig(**fc_dict),
        train_config=TrainConfig(**header["train_config"]),
    )


def save_kernel_model(model: KernelSVMModel, path, category: str = "") -> None:
    header = {
        "category": category,
        "gamma": float(model.gamma),
        "bias": float(model.bias),
        "n_sv": int(model.support_vectors.shape[0]),
        "dim": int(model.support_vectors.shape[1]),
    }
    _write_container(path, 2, header, [model.support_vectors, model.dual_coef])


def load_kernel_model(path) -> tuple[KernelSVMModel, str]:
    kind, header, payload = _read_container(path)
    if kind != 2:
        raise Malformed("not a kernel model file")
    n, d = header["n_sv"], header["dim"]
    need = 8 * (n * d + n)
    if len(payload) < need:
        raise Malformed("truncated kernel model blocks")
    sv = np.frombuffer(payload[: 8 * n * d], dtype="<f8").reshape(n, d).copy()
    coef = np.frombuffer(payload[8 * n * d : need], dtype="<f8").copy()
    model = KernelSVMModel(
        support_vectors=sv, dual_coef=coef, bias=float(header["bias"]), gamma=float(header["gamma"])
    )
    return model, header["category"]


def cuboid_cache_key(scene_id: str, cuboid, config: FeatureConfig) -> str:
    raw = np.asarray(
        list(cuboid.center) + [cuboid.yaw] + list(cuboid.size), dtype="<f8"
    ).tobytes()
    h = hashlib.sha1(raw).hexdigest()[:16]
    g = config.grid
    return f"{scene_id}/{h}/{g.nx}x{g.ny}x{g.nz}m{g.margin}/{int(config.latent)}"


class FeatureCache:
    """In-memory feature store with a versioned binary file format."""

    def __init__(self, config: FeatureConfig):
        self.config = config
        self.entries: dict[str, np.ndarray] = {}

    def get(self, key: str) -> np.ndarray | None:
        return self.entries.get(key)

    def put(self, key: str, vector: np.ndarray) -> None:
        self.entries[key] = np.asarray(vector, dtype=np.float32)

    def save(self, path) -> None:
        header = json.dumps(
            {"blocks": _block_table(self.config)}, sort_keys=True
        ).encode()
        with open(path, "wb") as f:
            f.write(CACHE_MAGIC)
            f.write(struct.pack("<HI", CACHE_VERSION, len(header)))
            f.write(header)
            f.write(struct.pack("<I", len(self.entries)))
            for key in sorted(self.entries):
                kb = key.encode()
                vec = np.ascontiguousarray(self.entries[key], dtype="<f4")
                f.write(struct.pack("<HI", len(kb), vec.size))
                f.write(kb)
                f.write(vec.tobytes())

    @classmethod
    def load(cls, path, config: FeatureConfig) -> "FeatureCache":
        with open(path, "rb") as f:
            data = f.read()
        if len(data) < 14 or data[:8] != CACHE_MAGIC:
            raise Malformed(f"not a feature cache: {path}")
        version, hlen = struct.unpack_from("<HI", data, 8)
        if version != CACHE_VERSION:
            raise VersionMismatch(f"cache version {version}")
        try:
            header = json.loads(data[14 : 14 + hlen])
        except ValueError as e:
            raise Malformed(f"bad cache header: {e}") from e
        if header.get("blocks") != _block_table(config):
            raise Malformed("cache was built with a different feature layout")
        off = 14 + hlen
        if len(data) < off + 4:
            raise Malformed("truncated cache")
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        cache = cls(config)
        for _ in range(count):
            klen, vlen = struct.unpack_from("<HI", data, off)
            off += 6
            key = data[off : off + klen].decode()
            off += klen
            vec = np.frombuffer(data[off : off + 4 * vlen], dtype="<f4").copy()
            off += 4 * vlen
            cache.entries[key] = vec
        return cache


def _block_table(config: FeatureConfig) -> list[list]:
    from .descriptors import (
        N_NORMAL_BINS,
        N_ORIENT_BINS,
        N_SURFACE_SLICES,
        N_VIEW,
        expanded_grid,
    )

    grid = expanded_grid(config.grid) if config.expanded else config.grid
    table = []
    if config.use_geometry:
        table.append(["density", grid.count])
        table.append(["normals", N_NORMAL_BINS * grid.count])
    if config.use_cog:
        table.append(["cog", N_ORIENT_BINS * grid.count])
    if config.use_view:
        table.append(["view", N_VIEW])
    if config.latent:
        surface = config.grid.nx * config.grid.ny * config.block_length()
        table.append(["surface", surface + N_SURFACE_SLICES])
    return [[n, int(l)] for n, l in table]
