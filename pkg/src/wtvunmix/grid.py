"""4-neighborhood grid structure and the weighted difference operator.

The operator ``W`` is a sparse (N, 4N) matrix grouped in four N-column
blocks, one per direction in :data:`DIRECTIONS` order. Column (d, i) of
``W`` carries +w at row i and -w at row j, where j is pixel i's neighbor
in direction d and w is the weight of the directed edge (i, j); columns of
border pixels without that neighbor are zero. For an (M, N) abundance
matrix A, column (d, i) of ``A @ W`` is then w * (a_i - a_j), so the
entrywise 1-norm of ``A @ W`` is the anisotropic weighted-TV penalty
sum_i sum_{j in N(i)} w_ij * ||a_i - a_j||_1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .core import GridDims, ValidationError

DIRECTIONS = ("left", "right", "up", "down")

_DIRECTION_CODE = {name: d for d, name in enumerate(DIRECTIONS)}


def neighbor_index(i: int, direction, dims: GridDims):
    """Linear index of pixel i's neighbor, or None at the grid border.

    ``direction`` is one of the names in :data:`DIRECTIONS` or its index.
    """
    if not 0 <= i < dims.n:
        raise IndexError(f"pixel index {i} out of range for {dims.n} pixels")
    d = _DIRECTION_CODE[direction] if isinstance(direction, str) else int(direction)
    row, col = divmod(i, dims.width)
    if d == 0:
        return i - 1 if col > 0 else None
    if d == 1:
        return i + 1 if col < dims.width - 1 else None
    if d == 2:
        return i - dims.width if row > 0 else None
    if d == 3:
        return i + dims.width if row < dims.height - 1 else None
    raise ValidationError(f"unknown direction {direction!r}")


def neighbor_table(dims: GridDims) -> np.ndarray:
    """(4, N) array of neighbor indices in DIRECTIONS order, -1 where absent."""
    n, w = dims.n, dims.width
    idx = np.arange(n)
    col = idx % w
    row = idx // w
    table = np.full((4, n), -1, dtype=np.int64)
    table[0, col > 0] = idx[col > 0] - 1
    table[1, col < w - 1] = idx[col < w - 1] + 1
    table[2, row > 0] = idx[row > 0] - w
    table[3, row < dims.height - 1] = idx[row < dims.height - 1] + w
    return table


def edge_mask_table(dims: GridDims) -> np.ndarray:
    """(4, N) boolean array marking directed edges that exist."""
    return neighbor_table(dims) >= 0


@dataclass
class GuidanceOperator:
    """Per-edge weights and the induced sparse difference operator.

    Built by :func:`build_difference_operator`; also owns the factorization
    of the Gram matrix I + W W^T, computed once and reused by every
    :func:`gram_solve` call (the ADMM inner loop solves against it each
    iteration).
    """

    dims: GridDims
    weights: np.ndarray          # (4, N); zero where the edge does not exist
    operator: sp.csr_matrix     # (N, 4N)
    _gram_lu: object = field(default=None, repr=False)

    def weighted_differences(self, a: np.ndarray) -> np.ndarray:
        """Dense (M, 4N) product A @ W."""
        return np.asarray(a @ self.operator)

    def penalty(self, a: np.ndarray) -> float:
        """Weighted anisotropic TV penalty ||A W||_{1,1}."""
        return float(np.abs(self.weighted_differences(a)).sum())

    @property
    def gram_lu(self):
        if self._gram_lu is None:
            gram = (sp.identity(self.dims.n, format="csc")
                    + (self.operator @ self.operator.T)).tocsc()
            self._gram_lu = splu(gram)
        return self._gram_lu


def build_difference_operator(weights, dims: GridDims) -> GuidanceOperator:
    """Assemble the sparse weighted difference operator from per-edge weights.

    ``weights`` is a (4, N) array in DIRECTIONS order; entry (d, i) is the
    weight of the directed edge from pixel i to its neighbor in direction
    d. Entries must lie in [0, 1] and be zero where the neighbor does not
    exist.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (4, dims.n):
        raise ValidationError(
            f"weights must have shape (4, {dims.n}), got {weights.shape}")
    if not np.all(np.isfinite(weights)):
        raise ValidationError("weights contain non-finite entries")
    if weights.min() < 0.0 or weights.max(initial=0.0) > 1.0:
        raise ValidationError("edge weights must lie in [0, 1]")
    table = neighbor_table(dims)
    if np.any(weights[table < 0] != 0.0):
        raise ValidationError("weights on nonexistent edges must be zero")

    n = dims.n
    rows = []
    cols = []
    vals = []
    for d in range(4):
        i = np.nonzero(table[d] >= 0)[0]
        j = table[d, i]
        w = weights[d, i]
        rows.append(i)
        cols.append(d * n + i)
        vals.append(w)
        rows.append(j)
        cols.append(d * n + i)
        vals.append(-w)
    operator = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, 4 * n),
    )
    return GuidanceOperator(dims=dims, weights=weights, operator=operator)


def gram_solve(operator: GuidanceOperator, b: np.ndarray) -> np.ndarray:
    """Solve X (I + W W^T) = B for X, with B of shape (M, N).

    I + W W^T is symmetric positive definite, so the right system equals
    (I + W W^T) X^T = B^T; the factorization cached on ``operator`` is
    reused across calls.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 2 or b.shape[1] != operator.dims.n:
        raise ValidationError(
            f"right-hand side must have {operator.dims.n} columns, got shape {b.shape}")
    return np.ascontiguousarray(operator.gram_lu.solve(b.T).T)
