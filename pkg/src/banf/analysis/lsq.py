"""Closed-form least-squares fit of lattice node values.

Training a band-limited field whose inner field can take any value at the
nodes is a linear least-squares problem ``min ||A X - b||^2`` where row ``n`` of
``A`` holds the interpolation weights of sample ``x_n``. Its exact solution is
the reference the stochastic optimizer is checked against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..bandlimit import Kernel, Lattice, interpolation_weights
from ..errors import NumericError

DENSE_LIMIT = 2048


@dataclass
class Projection:
    values: np.ndarray  # (nodes, channels)
    residual_norm: float
    optimality: float  # ||A^T (A X - b)||


def interpolation_matrix(lattice: Lattice, kernel: Kernel, xs) -> sp.csr_matrix:
    idx, w = interpolation_weights(xs, lattice, kernel)
    rows = np.repeat(np.arange(idx.shape[0]), idx.shape[1])
    # duplicate (row, col) pairs from edge clamping are summed on conversion
    return sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(idx.shape[0], lattice.size))


def ls_projection(lattice: Lattice, kernel: Kernel, xs, b) -> Projection:
    """Node values minimizing the squared reconstruction error at ``xs``.

    Small systems use LAPACK least squares on the dense matrix; larger ones
    solve the sparse normal equations directly.
    """
    b = np.asarray(b, dtype=np.float64)
    vector = b.ndim == 1
    if vector:
        b = b[:, None]
    A = interpolation_matrix(lattice, kernel, xs)
    n_rows, n_nodes = A.shape
    if n_rows < n_nodes:
        raise NumericError(f"underdetermined: {n_rows} samples for {n_nodes} lattice nodes")
    col_norm = np.sqrt(np.asarray(A.multiply(A).sum(axis=0))).ravel()
    empty = np.flatnonzero(col_norm == 0)
    if empty.size:
        raise NumericError(f"rank deficient: lattice nodes {empty.tolist()[:20]} receive no samples")

    if n_nodes <= DENSE_LIMIT:
        dense = A.toarray()
        X, _, rank, sv = np.linalg.lstsq(dense, b, rcond=None)
        if rank < n_nodes:
            _, _, vt = np.linalg.svd(dense, full_matrices=False)
            worst = np.argsort(-np.abs(vt[-1]))[:5]
            raise NumericError(f"rank deficient ({rank} < {n_nodes}); null space dominated by nodes {worst.tolist()}")
    else:
        normal = (A.T @ A).tocsc()
        X = spla.spsolve(normal, A.T @ b)
        X = np.asarray(X).reshape(n_nodes, -1)
        if not np.all(np.isfinite(X)):
            raise NumericError("normal equations are singular")
        # one refinement sweep keeps the optimality residual at round-off level
        X = X + np.asarray(spla.spsolve(normal, A.T @ (b - A @ X))).reshape(n_nodes, -1)
    resid = A @ X - b
    return Projection(
        values=X[:, 0] if vector else X,
        residual_norm=float(np.linalg.norm(resid)),
        optimality=float(np.linalg.norm(A.T @ resid)),
    )
