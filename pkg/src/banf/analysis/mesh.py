"""Marching cubes, triangle-mesh measurements and surface sampling.

Known limitation: the 256-case table is used without an asymptotic decider,
so faces with two diagonal sign changes may join inconsistently between
neighboring cells and leave small holes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, NumericError
from ._mctables import CORNERS, EDGES, TRIANGLES

log = logging.getLogger(__name__)


def _table() -> tuple[np.ndarray, np.ndarray]:
    tris = np.full((256, 15), -1, dtype=np.int64)
    counts = np.zeros(256, dtype=np.int64)
    for case, row in enumerate(TRIANGLES):
        tris[case, : len(row)] = row
        counts[case] = len(row) // 3
    return tris, counts


_TRIS, _TRI_COUNTS = _table()
_CORNERS = np.array(CORNERS, dtype=np.int64)
# per cube edge: the lower corner offset and the axis it runs along
_EDGE_BASE = np.array([np.minimum(_CORNERS[a], _CORNERS[b]) for a, b in EDGES])
_EDGE_AXIS = np.array([int(np.argmax(np.abs(_CORNERS[b] - _CORNERS[a]))) for a, b in EDGES])


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (T, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ConfigError("triangle index out of range")
        if not np.all(np.isfinite(self.vertices)):
            raise ConfigError("mesh has non-finite vertices")

    @property
    def empty(self) -> bool:
        return len(self.triangles) == 0

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def write_obj(self, path) -> None:
        lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in self.vertices]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in self.triangles]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def marching_cubes(values, iso: float = 0.0, spacing=1.0, origin=0.0) -> Mesh:
    """Triangulate the ``iso`` level set of a sampled scalar grid.

    ``values[i, j, k]`` is the sample at ``origin + (i, j, k) * spacing``.
    A corner counts as inside when its value is strictly below ``iso``.
    Vertices shared by neighboring cells are welded, and triangle normals
    point toward increasing values (outward for a signed distance).
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 3 or min(v.shape) < 2:
        raise ConfigError(f"need a 3-D grid with at least 2 samples per axis, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ConfigError("grid contains non-finite values")
    spacing = np.broadcast_to(np.asarray(spacing, dtype=np.float64), (3,))
    origin = np.broadcast_to(np.asarray(origin, dtype=np.float64), (3,))

    below = v < iso
    nx, ny, nz = (s - 1 for s in v.shape)
    case = np.zeros((nx, ny, nz), dtype=np.int64)
    for c, (dx, dy, dz) in enumerate(CORNERS):
        case |= below[dx : dx + nx, dy : dy + ny, dz : dz + nz].astype(np.int64) << c
    cells = np.flatnonzero((case != 0) & (case != 255))
    if cells.size == 0:
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    cell_case = case.ravel()[cells]
    cell_ijk = np.stack(np.unravel_index(cells, (nx, ny, nz)), axis=1)
    n_tri = _TRI_COUNTS[cell_case]
    owner = np.repeat(np.arange(len(cells)), n_tri)
    slot = np.arange(owner.size) - np.repeat(np.cumsum(n_tri) - n_tri, n_tri)
    edges = _TRIS[cell_case[owner][:, None], 3 * slot[:, None] + np.arange(3)]  # (T, 3)

    # global edge id: 3 * (flat index of the edge's lower grid point) + axis
    start = cell_ijk[owner][:, None, :] + _EDGE_BASE[edges]
    axis = _EDGE_AXIS[edges]
    flat = np.ravel_multi_index((start[..., 0], start[..., 1], start[..., 2]), v.shape)
    edge_id = 3 * flat + axis
    uniq, inverse = np.unique(edge_id.ravel(), return_inverse=True)

    p0 = np.stack(np.unravel_index(uniq // 3, v.shape), axis=1)
    ax = uniq % 3
    p1 = p0.copy()
    p1[np.arange(len(p1)), ax] += 1
    v0 = v[p0[:, 0], p0[:, 1], p0[:, 2]]
    v1 = v[p1[:, 0], p1[:, 1], p1[:, 2]]
    t = (iso - v0) / (v1 - v0)
    verts = origin + (p0 + t[:, None] * (p1 - p0)) * spacing
    tris = inverse.reshape(-1, 3)[:, ::-1]
    return Mesh(verts, tris)


def sample_mesh_surface(mesh: Mesh, n: int, seed: int = 0) -> np.ndarray:
    """``n`` points uniformly distributed over the mesh surface by area."""
    if mesh.empty:
        raise ConfigError("cannot sample an empty mesh")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if not total > 0:
        raise NumericError("mesh has zero total area")
    rng = np.random.default_rng(seed)
    tri = rng.choice(len(areas), size=n, p=areas / total)
    u, w = rng.random(n), rng.random(n)
    s = np.sqrt(u)
    b0, b1, b2 = 1.0 - s, s * (1.0 - w), s * w
    p = mesh.vertices[mesh.triangles[tri]]
    return b0[:, None] * p[:, 0] + b1[:, None] * p[:, 1] + b2[:, None] * p[:, 2]


def grid_points(resolution: int, dim: int = 3) -> np.ndarray:
    """Row-major points ``t / resolution`` for ``t = 0..resolution`` on every axis."""
    if resolution < 1:
        raise ConfigError(f"resolution must be positive, got {resolution}")
    axis = np.arange(resolution + 1) / resolution
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def extract_mesh(fn, resolution: int, iso: float = 0.0, chunk: int = 65536) -> Mesh:
    """Marching cubes of ``fn`` sampled at ``(resolution + 1)^3`` grid points over the unit cube."""
    pts = grid_points(resolution)
    vals = np.concatenate([np.asarray(fn(pts[i : i + chunk])).reshape(-1) for i in range(0, len(pts), chunk)])
    mesh = marching_cubes(vals.reshape((resolution + 1,) * 3), iso, spacing=1.0 / resolution)
    if mesh.empty:
        log.warning("level set %g does not cross the sampled grid; mesh is empty", iso)
    return mesh
