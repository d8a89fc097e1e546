"""Coordinate field architectures: grid/hash encoders feeding an MLP head.

All fields live on the unit cube ``[0, 1]^d``. Queries outside it are clamped
to the boundary. Grids are vertex-centered: a grid of resolution ``res`` has
``res + 1`` vertices per axis at ``t / res``.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Union

import numpy as np

from . import diffcore as dc
from .errors import ConfigError

log = logging.getLogger(__name__)

HASH_PRIMES = (1, 2654435761, 805459861)
SNAP_TOL = 1e-10


# --------------------------------------------------------------- backbones


@dataclass(frozen=True)
class Direct:
    """One trainable value vector per grid vertex; no head."""

    resolution: int
    channels: int = 1

    kind = "direct"


@dataclass(frozen=True)
class DenseGrid:
    resolution: int
    features: int = 2

    kind = "dense"


@dataclass(frozen=True)
class HashGrid:
    levels: int = 8
    table_size: int = 2**14
    features: int = 2
    res_min: int = 16
    res_max: int = 256

    kind = "hash"

    def resolutions(self) -> list[int]:
        """Per-level grid resolutions, geometric from ``res_min`` to ``res_max``."""
        if self.levels == 1:
            return [self.res_min]
        growth = np.exp((np.log(self.res_max) - np.log(self.res_min)) / (self.levels - 1))
        return [int(round(self.res_min * growth**level)) for level in range(self.levels)]


Backbone = Union[Direct, DenseGrid, HashGrid, None]
_BACKBONES = {"direct": Direct, "dense": DenseGrid, "hash": HashGrid}


@dataclass(frozen=True)
class HeadSpec:
    hidden: tuple[int, ...] = (32, 32, 32)
    activation: str = "relu"
    out_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.out_channels < 1:
            raise ConfigError("out_channels must be >= 1")


@dataclass(frozen=True)
class FieldArch:
    """Backbone encoder plus MLP head.

    ``backbone=None`` gives a plain coordinate MLP; a :class:`Direct`
    backbone takes no head.
    """

    domain_dim: int
    backbone: Backbone = None
    head: HeadSpec | None = field(default_factory=HeadSpec)

    def __post_init__(self):
        if self.domain_dim not in (1, 2, 3):
            raise ConfigError(f"domain_dim must be 1, 2 or 3, got {self.domain_dim}")
        if isinstance(self.backbone, Direct):
            if self.head is not None:
                raise ConfigError("Direct backbone takes no head")
        elif self.head is None:
            raise ConfigError("non-Direct architectures need an MLP head")
        if isinstance(self.backbone, HashGrid):
            hg = self.backbone
            if hg.levels < 1 or hg.res_min < 1 or hg.res_max < hg.res_min:
                raise ConfigError(f"invalid hash grid {hg}")
        if isinstance(self.backbone, (Direct, DenseGrid)) and self.backbone.resolution < 1:
            raise ConfigError("grid resolution must be >= 1")

    @property
    def out_channels(self) -> int:
        if isinstance(self.backbone, Direct):
            return self.backbone.channels
        return self.head.out_channels

    @property
    def feature_dim(self) -> int:
        bb = self.backbone
        if bb is None:
            return self.domain_dim
        if isinstance(bb, DenseGrid):
            return bb.features
        if isinstance(bb, HashGrid):
            return bb.levels * bb.features
        return bb.channels

    def head_spec(self) -> dc.MLPSpec | None:
        if self.head is None:
            return None
        sizes = (self.feature_dim, *self.head.hidden, self.head.out_channels)
        return dc.MLPSpec(sizes, self.head.activation, prefix="head")

    def to_dict(self) -> dict:
        bb = self.backbone
        return {
            "domain_dim": self.domain_dim,
            "backbone": None if bb is None else {"kind": bb.kind, **asdict(bb)},
            "head": None if self.head is None else asdict(self.head),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FieldArch":
        try:
            bb = data.get("backbone")
            if bb is not None:
                bb = dict(bb)
                bb = _BACKBONES[bb.pop("kind")](**bb)
            head = data.get("head")
            if head is not None:
                head = HeadSpec(**head)
            return cls(int(data["domain_dim"]), bb, head)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid architecture descriptor: {exc}") from exc


@dataclass(frozen=True)
class InitPolicy:
    """How to initialize a field.

    ``near_zero``: zero biases, zero-mean Gaussian weights and tables with std
    ``sigma``; ``zero_output`` additionally zeroes the final layer.
    ``standard``: He-normal head weights, small uniform tables.
    ``sphere_sdf``: standard init followed by ``pretrain_steps`` of Adam on the
    analytic SDF of a sphere of ``radius`` around ``center``.
    """

    mode: str = "near_zero"
    sigma: float = 1e-2
    seed: int = 0
    zero_output: bool = False
    radius: float = 0.3
    center: tuple[float, ...] = (0.5, 0.5, 0.5)
    pretrain_steps: int = 2000
    pretrain_batch: int = 1024

    def __post_init__(self):
        if self.mode not in ("near_zero", "standard", "sphere_sdf"):
            raise ConfigError(f"unknown init mode {self.mode!r}")


# ------------------------------------------------------------ interpolation


def clamp_points(points: np.ndarray, dim: int) -> np.ndarray:
    """Return ``points`` as an (n, dim) float array clamped into the unit cube."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, dim) if dim > 1 else pts[:, None]
    if pts.shape[-1] != dim:
        raise ConfigError(f"expected points with {dim} coordinates, got shape {pts.shape}")
    outside = (pts < 0.0) | (pts > 1.0)
    if outside.any():
        log.warning("%d coordinates outside [0, 1] clamped to the boundary", int(outside.sum()))
        pts = np.clip(pts, 0.0, 1.0)
    return pts


def multilinear(points: np.ndarray, res: int) -> tuple[np.ndarray, np.ndarray]:
    """Corner vertices and weights of the grid cell containing each point.

    Returns integer corner coordinates of shape (n, 2**d, d) and weights of
    shape (n, 2**d) that sum to one.
    """
    u = points * res
    snapped = np.rint(u)
    u = np.where(np.abs(u - snapped) < SNAP_TOL, snapped, u)
    base = np.clip(np.floor(u), 0, res - 1).astype(np.int64)
    frac = u - base
    d = points.shape[1]
    offsets = np.array(list(product((0, 1), repeat=d)), dtype=np.int64)
    corners = base[:, None, :] + offsets[None, :, :]
    w = np.where(offsets[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
    return corners, np.prod(w, axis=2)


def ravel_vertices(corners: np.ndarray, res: int) -> np.ndarray:
    """Row-major flat index of vertex coordinates on a ``(res + 1)^d`` grid."""
    idx = np.zeros(corners.shape[:-1], dtype=np.int64)
    for axis in range(corners.shape[-1]):
        idx = idx * (res + 1) + corners[..., axis]
    return idx


def hash_vertices(corners: np.ndarray, table_size: int) -> np.ndarray:
    """Spatial hash: XOR of coordinate-times-prime, modulo ``table_size``."""
    h = np.zeros(corners.shape[:-1], dtype=np.uint64)
    for axis in range(corners.shape[-1]):
        h ^= (corners[..., axis].astype(np.uint64) * np.uint64(HASH_PRIMES[axis])) & np.uint64(0xFFFFFFFF)
    return (h % np.uint64(table_size)).astype(np.int64)


def dense_grid_encode(points, grid: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a vertex feature grid.

    ``grid`` has shape ``(res + 1,) * d + (features,)``.
    """
    d = grid.ndim - 1
    res = grid.shape[0] - 1
    pts = clamp_points(points, d)
    corners, w = multilinear(pts, res)
    table = grid.reshape(-1, grid.shape[-1])
    return np.einsum("nk,nkc->nc", w, table[ravel_vertices(corners, res)])


def hash_encode(points, cfg: HashGrid, tables: list[np.ndarray]) -> np.ndarray:
    """Concatenated per-level hash-grid features for each point."""
    d = np.asarray(points).shape[-1] if np.asarray(points).ndim > 1 else 1
    pts = clamp_points(points, d)
    feats = []
    for res, table in zip(cfg.resolutions(), tables):
        corners, w = multilinear(pts, res)
        feats.append(np.einsum("nk,nkc->nc", w, table[hash_vertices(corners, cfg.table_size)]))
    return np.concatenate(feats, axis=1)


# ----------------------------------------------------------------- params


def param_shapes(arch: FieldArch) -> dict[str, tuple[int, ...]]:
    bb, d = arch.backbone, arch.domain_dim
    shapes: dict[str, tuple[int, ...]] = {}
    if isinstance(bb, Direct):
        shapes["direct.values"] = ((bb.resolution + 1) ** d, bb.channels)
    elif isinstance(bb, DenseGrid):
        shapes["grid.values"] = ((bb.resolution + 1) ** d, bb.features)
    elif isinstance(bb, HashGrid):
        for level in range(bb.levels):
            shapes[f"hash.{level}"] = (bb.table_size, bb.features)
    spec = arch.head_spec()
    if spec is not None:
        shapes.update(spec.param_shapes())
    return shapes


def init_field(arch: FieldArch, policy: InitPolicy = InitPolicy()) -> dc.ParamStore:
    """Create the parameters of ``arch``; deterministic in ``policy.seed``."""
    if policy.mode == "sphere_sdf" and (arch.out_channels != 1 or arch.domain_dim != 3):
        raise ConfigError("sphere_sdf init needs a scalar field on a 3-D domain")
    rng = np.random.default_rng(policy.seed)
    spec = arch.head_spec()
    last_w = spec.weight_name(spec.n_layers - 1) if spec else None
    params = dc.ParamStore()
    for name, shape in param_shapes(arch).items():
        if name.endswith(".bias") or name == "direct.values":
            value = np.zeros(shape)
        elif policy.mode == "near_zero":
            value = rng.normal(0.0, policy.sigma, size=shape)
        elif name.startswith("head."):
            value = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
        else:
            value = rng.uniform(-1e-4, 1e-4, size=shape)
        if policy.zero_output and name == last_w:
            value = np.zeros(shape)
        params.add(name, value)
    if policy.mode == "sphere_sdf":
        _fit_sphere(arch, params, policy, rng)
    return params


def _sphere_sdf(points: np.ndarray, center, radius: float) -> np.ndarray:
    return np.linalg.norm(points - np.asarray(center), axis=1, keepdims=True) - radius


def _fit_sphere(arch: FieldArch, params: dc.ParamStore, policy: InitPolicy, rng) -> None:
    if isinstance(arch.backbone, Direct):
        res = arch.backbone.resolution
        axes = np.arange(res + 1) / res
        verts = np.stack(np.meshgrid(axes, axes, axes, indexing="ij"), -1).reshape(-1, 3)
        params.assign("direct.values", _sphere_sdf(verts, policy.center, policy.radius))
        return
    state = dc.OptState("adam", lr=1e-3)
    half = policy.pretrain_batch // 2
    for _ in range(policy.pretrain_steps):
        uniform = rng.uniform(0.0, 1.0, size=(half, 3))
        dirs = rng.normal(size=(policy.pretrain_batch - half, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        shell = policy.center + dirs * (policy.radius + rng.normal(0.0, 0.05, size=(len(dirs), 1)))
        pts = np.clip(np.concatenate([uniform, shell]), 0.0, 1.0)
        tape = dc.Tape()
        loss = dc.mse(field_node(tape, arch, params, pts), _sphere_sdf(pts, policy.center, policy.radius))
        dc.optimizer_step(params, tape.backward(loss, params=params), state)
    params.version = 0


# --------------------------------------------------------------- evaluation


def field_node(tape: dc.Tape, arch: FieldArch, params: dc.ParamStore, xs) -> dc.Node:
    """Evaluate ``arch`` at points ``xs`` on ``tape``; returns an (n, channels) node."""
    pts = clamp_points(xs, arch.domain_dim)
    bb = arch.backbone
    if bb is None:
        feat = tape.constant(pts)
    elif isinstance(bb, (Direct, DenseGrid)):
        corners, w = multilinear(pts, bb.resolution)
        name = "direct.values" if isinstance(bb, Direct) else "grid.values"
        feat = dc.gather(tape.param(params, name), ravel_vertices(corners, bb.resolution), w)
    else:
        levels = []
        for level, res in enumerate(bb.resolutions()):
            corners, w = multilinear(pts, res)
            table = tape.param(params, f"hash.{level}")
            levels.append(dc.gather(table, hash_vertices(corners, bb.table_size), w))
        feat = levels[0] if len(levels) == 1 else dc.concat(levels, axis=1)
    spec = arch.head_spec()
    if spec is None:
        return feat
    return dc.mlp_forward(tape, params, spec, feat)


def eval_field(arch: FieldArch, params: dc.ParamStore, xs) -> np.ndarray:
    """Evaluate without recording; returns an (n, channels) array."""
    return field_node(dc.Tape(record=False), arch, params, xs).value


# ---------------------------------------------------------------- snapshots

_MAGIC = b"BANFPRM1"


def save_params(path, params: dc.ParamStore, arch: FieldArch | None = None, **meta) -> None:
    """Write a parameter snapshot: magic, header length, JSON header, tensor data.

    Tensor data is little-endian float64, concatenated in header order.
    """
    tensors, offset, blobs = [], 0, []
    for name, value in params.items():
        blob = np.ascontiguousarray(value, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(value.shape), "offset": offset})
        offset += len(blob)
        blobs.append(blob)
    header = {"format": 1, "tensors": tensors, "arch": None if arch is None else arch.to_dict(), **meta}
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def load_params(path) -> tuple[dc.ParamStore, dict]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ConfigError(f"{path}: not a parameter snapshot")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + n].decode("utf-8"))
    body = data[16 + n :]
    params = dc.ParamStore()
    for t in header["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=t["offset"])
        params.add(t["name"], arr.reshape(t["shape"]))
    return params, header
