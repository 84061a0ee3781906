"""Index selection: DEIM, QDEIM, greedy row oversampling, stencil adjacency.

All greedy argmax steps break ties toward the lowest index (numpy's
``argmax`` convention) so repeated runs are bit-reproducible.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InputError, ModelDefinitionError, SelectionError


@dataclass(frozen=True)
class SelectionIndices:
    """Column indices ``s``, row indices ``p`` and adjacent rows ``p_a``."""

    s: np.ndarray
    p: np.ndarray
    p_a: np.ndarray
    e: int = 0

    def __post_init__(self):
        for name in ("s", "p", "p_a"):
            v = getattr(self, name)
            if v.size != np.unique(v).size:
                raise InputError(f"SelectionIndices.{name} has duplicates")
        if np.intersect1d(self.p, self.p_a).size:
            raise InputError("p and p_a must be disjoint")


def deim(B):
    """Greedy DEIM point selection on an orthonormal (or independent) basis.

    The first index is the argmax of ``|B[:, 0]|``; each subsequent index
    is the argmax of the residual of the next basis vector after oblique
    interpolation at the already-selected points.  Returns ``k`` indices
    for a basis with ``k`` columns.
    """
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[1] > B.shape[0]:
        raise InputError("deim: basis must be m x k with k <= m")
    m, k = B.shape
    idx = np.empty(k, dtype=int)
    idx[0] = int(np.argmax(np.abs(B[:, 0])))
    for j in range(1, k):
        sub = B[idx[:j], :j]
        try:
            coef = np.linalg.solve(sub, B[idx[:j], j])
        except np.linalg.LinAlgError as exc:
            raise SelectionError(
                f"deim: interpolation submatrix singular at column {j}"
            ) from exc
        res = B[:, j] - B[:, :j] @ coef
        idx[j] = int(np.argmax(np.abs(res)))
        if idx[j] in idx[:j]:
            raise SelectionError(f"deim: duplicate index selected at column {j}")
    return idx


def qdeim(B):
    """QDEIM point selection: pivots of a column-pivoted QR of ``B.T``."""
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[1] > B.shape[0]:
        raise InputError("qdeim: basis must be m x k with k <= m")
    _, R, piv = scipy.linalg.qr(B.T, pivoting=True, mode="economic")
    k = B.shape[1]
    if np.any(np.abs(np.diag(R)) == 0.0):
        raise SelectionError("qdeim: basis numerically rank deficient")
    return piv[:k].astype(int)


def oversample(B, base, e):
    """Extend ``base`` with ``e`` rows by the GappyPOD+E greedy criterion.

    Each new row is chosen to increase the smallest singular value of the
    sampled basis: with ``w`` the right singular vector of the current
    smallest singular value of ``B[sel]``, the row maximizing ``|B @ w|``
    among unselected rows is added.  Appending rows never decreases the
    smallest singular value, so the pseudoinverse norm of the sampled
    basis is nonincreasing in ``e``.
    """
    B = np.asarray(B, dtype=float)
    base = np.asarray(base, dtype=int)
    if e < 0:
        raise InputError("oversample: e must be nonnegative")
    if base.size + e > B.shape[0]:
        raise InputError("oversample: e too large for the number of rows")
    if e == 0:
        return base.copy()
    sel = list(base)
    taken = np.zeros(B.shape[0], dtype=bool)
    taken[base] = True
    for _ in range(e):
        _, _, Wt = np.linalg.svd(B[sel], full_matrices=False)
        score = np.abs(B @ Wt[-1])
        score[taken] = -1.0
        i = int(np.argmax(score))
        sel.append(i)
        taken[i] = True
    return np.asarray(sel, dtype=int)


def find_adjacent(p, stencil):
    """Rows outside ``p`` whose values the stencil needs to evaluate rows ``p``.

    ``stencil`` maps each row to its neighbor indices (self excluded).
    The result is sorted ascending and disjoint from ``p``.
    """
    p = np.asarray(p, dtype=int)
    n = len(stencil)
    neighbors = set()
    for i in p:
        for q in stencil[i]:
            if q < 0 or q >= n:
                raise ModelDefinitionError(f"stencil index {q} out of range for row {i}")
            neighbors.add(int(q))
    neighbors.difference_update(int(i) for i in p)
    return np.asarray(sorted(neighbors), dtype=int)
