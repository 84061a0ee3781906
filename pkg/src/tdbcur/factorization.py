"""Low-rank factorizations: truncated SVD, stable CUR assembly, diagnostics.

All factorizations are returned in SVD-like form ``U @ diag(sigma) @ Y.T``
with orthonormal ``U`` and ``Y``.  A deterministic sign convention is
applied: the first entry of each column of ``U`` whose magnitude exceeds
a relative threshold is made positive.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConditioningError, FactorizationError, InputError

log = logging.getLogger(__name__)

#: binary64 unit roundoff, default machine epsilon for truncation rules
MACHINE_EPS = float(np.finfo(np.float64).eps)


@dataclass(frozen=True)
class TruncationRule:
    """How to pick the retained rank of a truncated SVD.

    mode is one of:

    * ``"penrose"`` -- keep singular values above
      ``machine_eps * max(n, m) * sigma_1``,
    * ``"fixed_rank"`` -- keep exactly ``rank`` values,
    * ``"threshold_pair"`` -- keep the smallest rank whose error proxy
      ``sigma_r / sqrt(sum_{i<=r} sigma_i^2)`` is at most ``eps_u``.
    """

    mode: str = "penrose"
    rank: int | None = None
    eps_l: float | None = None
    eps_u: float | None = None
    machine_eps: float = MACHINE_EPS

    def __post_init__(self):
        if self.machine_eps <= 0:
            raise InputError("machine_eps must be positive")
        if self.mode not in ("penrose", "fixed_rank", "threshold_pair"):
            raise InputError(f"unknown truncation mode {self.mode!r}")
        if self.mode == "fixed_rank" and (self.rank is None or self.rank < 1):
            raise InputError("fixed_rank mode needs rank >= 1")
        if self.mode == "threshold_pair":
            if self.eps_l is None or self.eps_u is None:
                raise InputError("threshold_pair mode needs eps_l and eps_u")
            if not 0.0 < self.eps_l < self.eps_u:
                raise InputError("threshold_pair needs 0 < eps_l < eps_u")


@dataclass
class LowRankState:
    """SVD-like factorization ``U diag(sigma) Y.T`` of the solution matrix."""

    U: np.ndarray
    sigma: np.ndarray
    Y: np.ndarray
    t: float = 0.0

    @property
    def r(self):
        return self.sigma.shape[0]

    @property
    def shape(self):
        return (self.U.shape[0], self.Y.shape[0])

    def reconstruct(self, rows=None, cols=None):
        """Dense ``V[rows, cols]`` without ever forming more than asked for."""
        U = self.U if rows is None else self.U[np.asarray(rows)]
        Y = self.Y if cols is None else self.Y[np.asarray(cols)]
        return (U * self.sigma) @ Y.T

    def singular_values(self):
        return self.sigma.copy()

    def validate(self, tol=1e-12):
        """Check orthonormality and singular-value ordering invariants."""
        r = self.r
        if not 1 <= r <= min(self.shape):
            raise InputError(f"rank {r} outside [1, min(n, s)]")
        for B, name in ((self.U, "U"), (self.Y, "Y")):
            err = np.max(np.abs(B.T @ B - np.eye(r)))
            if err > tol:
                raise InputError(f"{name} not orthonormal (max dev {err:.2e})")
        if np.any(self.sigma < 0) or np.any(np.diff(self.sigma) > 0):
            raise InputError("singular values must be nonnegative, nonincreasing")


def _fix_signs(U, Y):
    """Make the dominant entry of each left singular vector positive."""
    k = U.shape[1]
    for j in range(k):
        col = U[:, j]
        big = np.abs(col) > 1e-3 * np.max(np.abs(col)) if col.any() else None
        if big is None:
            continue
        lead = np.flatnonzero(big)[0]
        if col[lead] < 0:
            U[:, j] = -col
            Y[:, j] = -Y[:, j]
    return U, Y


def truncation_rank(sigma, rule, n, m):
    """Retained rank for the singular values ``sigma`` under ``rule``."""
    if rule.mode == "fixed_rank":
        return min(rule.rank, sigma.shape[0])
    if sigma[0] == 0.0:
        log.warning("truncated_svd: all-zero input, returning rank 1 with sigma=0")
        return 1
    if rule.mode == "penrose":
        cut = rule.machine_eps * max(n, m) * sigma[0]
        return max(1, int(np.count_nonzero(sigma > cut)))
    # threshold_pair: smallest r whose error proxy drops to eps_u or below
    cum = np.sqrt(np.cumsum(sigma**2))
    proxy = sigma / cum
    ok = np.flatnonzero(proxy <= rule.eps_u)
    return int(ok[0]) + 1 if ok.size else sigma.shape[0]


def truncated_svd(M, rule=TruncationRule()):
    """Truncated SVD of a dense matrix under the given retention rule.

    Returns ``(U, sigma, Y)`` with ``M ~= U @ diag(sigma) @ Y.T``.  The
    factors are Eckart-Young optimal for the retained rank.  An all-zero
    matrix under the penrose rule yields rank 1 with a zero singular value
    (degenerate case, logged) so downstream index selection always has a
    basis vector to work with.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or min(M.shape) < 1:
        raise InputError("truncated_svd needs a 2-D matrix")
    if not np.all(np.isfinite(M)):
        raise InputError("truncated_svd: input has non-finite entries")
    n, m = M.shape
    U, sigma, Yt = scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesdd")
    k = truncation_rank(sigma, rule, n, m)
    U, Y = _fix_signs(U[:, :k].copy(), Yt[:k].T.copy())
    return U, sigma[:k].copy(), Y


def stable_cur(cols, rows, p, t=0.0):
    """SVD-like CUR factorization from sampled columns and rows.

    ``cols`` holds ``V(:, s)`` (n x r), ``rows`` holds ``V(p, :)``
    (r' x s, r' >= r when oversampling) and ``p`` the row indices the
    samples were taken at.  The assembly is QR of the columns, an oblique
    least-squares projection of the sampled rows onto ``Q(p, :)``, and an
    in-subspace rotation of ``Q`` by the left singular vectors of the
    mixing matrix.  The pseudoinverse is applied through a column-pivoted
    orthogonal solve, never normal equations.
    """
    cols = np.asarray(cols, dtype=float)
    rows = np.asarray(rows, dtype=float)
    p = np.asarray(p, dtype=int)
    if rows.shape[0] != p.shape[0]:
        raise InputError("stable_cur: rows/p size mismatch")
    if rows.shape[0] < cols.shape[1]:
        raise InputError("stable_cur: fewer sampled rows than columns")
    norms = np.linalg.norm(cols, axis=0)
    if np.any(norms == 0.0):
        raise FactorizationError("stable_cur: exactly zero column in sampled columns")

    Q, R = np.linalg.qr(cols)
    if np.any(np.diag(R) == 0.0):
        raise FactorizationError("stable_cur: sampled columns exactly rank deficient")

    Qp = Q[p]
    smin = np.linalg.svd(Qp, compute_uv=False)[-1]
    if smin <= 1e-12:
        raise ConditioningError(
            f"stable_cur: Q(p,:) numerically singular (sigma_min={smin:.2e})",
            pinv_norm=np.inf if smin == 0 else 1.0 / smin,
        )
    Z, _, _, _ = scipy.linalg.lstsq(Qp, rows, lapack_driver="gelsy")
    Uz, sigma, Yt = scipy.linalg.svd(Z, full_matrices=False)
    U, Y = _fix_signs(Q @ Uz, Yt.T.copy())
    return LowRankState(U=U, sigma=sigma, Y=Y, t=t)


def amplification_factor(U, Y, p, s_idx):
    """DEIM-CUR error-bound factors ``(eta_r, eta_c, c)``.

    ``eta_r`` and ``eta_c`` are the spectral norms of the pseudoinverses
    of the sampled bases; ``c = min(eta_r (1 + eta_c), eta_c (1 + eta_r))``
    bounds the CUR error relative to the projection error.
    """
    U = np.asarray(U, dtype=float)
    Y = np.asarray(Y, dtype=float)

    def pinv_norm(B, idx, name):
        sub = B[np.asarray(idx, dtype=int)]
        sv = np.linalg.svd(sub, compute_uv=False)
        if sv[-1] <= 0.0:
            raise ConditioningError(f"amplification_factor: {name} submatrix singular")
        return 1.0 / sv[-1]

    eta_r = pinv_norm(U, p, "row")
    eta_c = pinv_norm(Y, s_idx, "column")
    c = min(eta_r * (1.0 + eta_c), eta_c * (1.0 + eta_r))
    return eta_r, eta_c, c
