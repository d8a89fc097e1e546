"""Band-limited fields: sample a field on a uniform lattice, then interpolate.

A :class:`BandLimitedField` never evaluates its inner field at the query
point. It evaluates the inner field at the lattice nodes around the query and
blends them with a reconstruction kernel, so the output cannot carry
frequencies the lattice cannot represent (beyond the kernel's own stop-band
leakage). Training the inner field through this reconstruction therefore fits
a low-pass version of the target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import diffcore as dc
from .errors import ConfigError
from .fields import SNAP_TOL, FieldArch, clamp_points, field_node

KERNELS = ("linear", "sinc", "bicubic", "lanczos")


@dataclass(frozen=True)
class Lattice:
    """Uniform lattice of period ``1 / resolution`` over the unit cube.

    Vertex-centered lattices have ``resolution + 1`` nodes per axis at
    ``t / resolution``; cell-centered ones have ``resolution`` nodes at
    ``(t + 1/2) / resolution``.
    """

    resolution: int
    dim: int = 1
    centering: str = "vertex"

    def __post_init__(self):
        if self.resolution < 2:
            raise ConfigError(f"lattice resolution must be >= 2, got {self.resolution}")
        if self.dim not in (1, 2, 3):
            raise ConfigError(f"lattice dim must be 1, 2 or 3, got {self.dim}")
        if self.centering not in ("vertex", "cell"):
            raise ConfigError(f"unknown centering {self.centering!r}")

    @property
    def period(self) -> float:
        return 1.0 / self.resolution

    @property
    def count(self) -> int:
        """Nodes per axis."""
        return self.resolution + 1 if self.centering == "vertex" else self.resolution

    @property
    def size(self) -> int:
        return self.count**self.dim

    def axis_coords(self) -> np.ndarray:
        t = np.arange(self.count, dtype=np.float64)
        if self.centering == "cell":
            t = t + 0.5
        return t / self.resolution

    def to_index_space(self, points: np.ndarray) -> np.ndarray:
        u = points * self.resolution
        return u - 0.5 if self.centering == "cell" else u

    def node_coords(self, flat: np.ndarray) -> np.ndarray:
        """Coordinates of nodes given by row-major flat index."""
        flat = np.asarray(flat, dtype=np.int64)
        axes = self.axis_coords()
        out = np.empty(flat.shape + (self.dim,))
        rem = flat
        for axis in reversed(range(self.dim)):
            out[..., axis] = axes[rem % self.count]
            rem = rem // self.count
        return out

    def nodes(self) -> np.ndarray:
        return self.node_coords(np.arange(self.size))

    def with_resolution(self, resolution: int) -> "Lattice":
        return Lattice(resolution, self.dim, self.centering)


def cutoff_frequency(lattice: Lattice) -> tuple[float, float]:
    """Angular cutoff ``2 pi / T`` and Nyquist frequency (cycles per unit)."""
    return 2.0 * math.pi / lattice.period, lattice.resolution / 2.0


@dataclass(frozen=True)
class Kernel:
    """Interpolating reconstruction kernel, offsets in units of the period.

    ``sinc`` is truncated to ``order`` taps by a box window; ``lanczos`` uses
    ``2 a`` taps; ``bicubic`` is the Keys cubic with ``a = -0.5``. With
    ``circular=True`` (2-D and 3-D) taps farther than the support radius in
    Euclidean distance are dropped. Weights are always renormalized to sum to
    one.
    """

    kind: str = "linear"
    order: int = 6
    a: int = 2
    circular: bool = False

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ConfigError(f"unknown kernel {self.kind!r}; expected one of {KERNELS}")
        if self.kind == "sinc" and (self.order < 2 or self.order % 2):
            raise ConfigError("sinc order must be an even number >= 2")
        if self.kind == "lanczos" and self.a < 1:
            raise ConfigError("lanczos a must be >= 1")

    @property
    def radius(self) -> int:
        return {"linear": 1, "sinc": self.order // 2, "bicubic": 2, "lanczos": self.a}[self.kind]

    def __call__(self, offset) -> np.ndarray:
        return kernel_eval(self, offset)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "order": self.order, "a": self.a, "circular": self.circular}

    @classmethod
    def from_dict(cls, data: dict) -> "Kernel":
        return cls(**data)


def kernel_eval(kernel: Kernel, offset) -> np.ndarray:
    x = np.abs(np.asarray(offset, dtype=np.float64))
    r = kernel.radius
    if kernel.kind == "linear":
        w = 1.0 - x
    elif kernel.kind == "sinc":
        w = np.sinc(x)
    elif kernel.kind == "lanczos":
        w = np.sinc(x) * np.sinc(x / kernel.a)
    else:
        a = -0.5
        w = np.where(
            x <= 1.0,
            (a + 2.0) * x**3 - (a + 3.0) * x**2 + 1.0,
            a * x**3 - 5.0 * a * x**2 + 8.0 * a * x - 4.0 * a,
        )
    return np.where(x < r, w, 0.0)


def interpolation_weights(points, lattice: Lattice, kernel: Kernel) -> tuple[np.ndarray, np.ndarray]:
    """Flat node indices and normalized weights for each query point.

    Returns two (n, (2 * radius) ** dim) arrays. Node indices beyond the
    lattice are clamped to the edge, so a node can appear more than once.
    """
    pts = clamp_points(points, lattice.dim)
    u = lattice.to_index_space(pts)
    snapped = np.rint(u)
    u = np.where(np.abs(u - snapped) < SNAP_TOL, snapped, u)
    r = kernel.radius
    taps = np.arange(-r + 1, r + 1)
    base = np.floor(u).astype(np.int64)
    n, d = pts.shape

    nodes = base[:, :, None] + taps[None, None, :]  # (n, d, 2r)
    dist = u[:, :, None] - nodes
    w_axis = kernel_eval(kernel, dist)
    nodes = np.clip(nodes, 0, lattice.count - 1)

    combos = np.array(list(product(range(2 * r), repeat=d)), dtype=np.int64)  # (K, d)
    idx = np.zeros((n, len(combos)), dtype=np.int64)
    w = np.ones((n, len(combos)))
    dist2 = np.zeros((n, len(combos)))
    for axis in range(d):
        sel = combos[:, axis]
        idx = idx * lattice.count + nodes[:, axis, sel]
        w = w * w_axis[:, axis, sel]
        dist2 = dist2 + dist[:, axis, sel] ** 2
    if kernel.circular and d > 1:
        w = np.where(dist2 < r * r, w, 0.0)
    w = w / w.sum(axis=1, keepdims=True)
    return idx, w


def contributing_nodes(p, lattice: Lattice, kernel: Kernel) -> list[tuple[tuple[int, ...], float]]:
    """Nonzero-weight nodes for a single point as ``(multi-index, weight)`` pairs.

    Clamped duplicates are merged.
    """
    idx, w = interpolation_weights(np.asarray(p, dtype=np.float64).reshape(1, lattice.dim), lattice, kernel)
    merged: dict[int, float] = {}
    for i, wi in zip(idx[0], w[0]):
        if wi != 0.0:
            merged[int(i)] = merged.get(int(i), 0.0) + float(wi)
    return [(tuple(int(v) for v in np.unravel_index(i, (lattice.count,) * lattice.dim)), wi)
            for i, wi in merged.items()]


@dataclass
class BandLimitedField:
    """Inner field read only at lattice nodes, reconstructed by ``kernel``."""

    arch: FieldArch
    params: dc.ParamStore
    lattice: Lattice
    kernel: Kernel = Kernel()
    _nodes: tuple | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.arch.domain_dim != self.lattice.dim:
            raise ConfigError(
                f"field dimension {self.arch.domain_dim} != lattice dimension {self.lattice.dim}"
            )

    def node(self, tape: dc.Tape, points) -> dc.Node:
        idx, w = interpolation_weights(points, self.lattice, self.kernel)
        if self.lattice.size <= idx.size:
            values = field_node(tape, self.arch, self.params, self.lattice.nodes())
            return dc.gather(values, idx, w)
        uniq, inverse = np.unique(idx, return_inverse=True)
        values = field_node(tape, self.arch, self.params, self.lattice.node_coords(uniq))
        return dc.gather(values, inverse.reshape(idx.shape), w)

    def __call__(self, points, chunk: int = 16384) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, self.lattice.dim)
        taps = (2 * self.kernel.radius) ** self.lattice.dim
        if len(pts) <= chunk or len(pts) * taps < self.lattice.size:
            return self.node(dc.Tape(record=False), pts).value
        # large queries: evaluate every node once and blend in chunks
        values = self.node_values()
        out = []
        for i in range(0, len(pts), chunk):
            idx, w = interpolation_weights(pts[i : i + chunk], self.lattice, self.kernel)
            out.append(np.einsum("nk,nkc->nc", w, values[idx]))
        return np.concatenate(out)

    def node_values(self) -> np.ndarray:
        """Inner field at every lattice node, shape (lattice.size, channels).

        Cached until the parameters or the lattice change.
        """
        key = (self.params.mutations, self.lattice)
        cached = self._nodes
        if cached is None or cached[0] is not self.params or cached[1] != key:
            values = field_node(dc.Tape(record=False), self.arch, self.params, self.lattice.nodes()).value
            values.setflags(write=False)
            self._nodes = cached = (self.params, key, values)
        return cached[2]


def bandlimited_eval(f: BandLimitedField, points) -> np.ndarray:
    return f(points)
