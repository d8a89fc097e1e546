"""Image and point-set error metrics."""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree

from ..errors import ConfigError

BRUTE_CHUNK = 1024


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give ``math.inf``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _check_points(p, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ConfigError(f"point set {name} must be a non-empty (n, d) array, got shape {p.shape}")
    return p


def _sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum((a - b) ** 2, axis=-1)


def nearest_sq_brute(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    out = np.empty(len(query))
    for i in range(0, len(query), BRUTE_CHUNK):
        q = query[i : i + BRUTE_CHUNK]
        out[i : i + BRUTE_CHUNK] = _sq(q[:, None, :], ref[None, :, :]).min(axis=1)
    return out


def nearest_sq_tree(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    # the tree only picks the neighbor; the distance uses the brute-force formula
    _, idx = cKDTree(ref).query(query, k=1)
    return _sq(query, ref[idx])


def chamfer_l2(a, b, method: str = "tree") -> float:
    """Symmetric Chamfer-L2 distance.

    ``0.5 * (mean_a min_b |a - b|^2 + mean_b min_a |b - a|^2)``. ``method`` is
    ``"tree"`` (k-d tree neighbor search) or ``"brute"`` (all pairs).
    """
    a = _check_points(a, "A")
    b = _check_points(b, "B")
    if a.shape[1] != b.shape[1]:
        raise ConfigError("point sets differ in dimension")
    if method == "tree":
        nn = nearest_sq_tree
    elif method == "brute":
        nn = nearest_sq_brute
    else:
        raise ConfigError(f"unknown method {method!r}")
    return 0.5 * (float(np.mean(nn(a, b))) + float(np.mean(nn(b, a))))
