"""Implicit time-scheme tables and per-column linearized system assembly.

Multistep coefficients are stored oldest-to-newest: position ``l`` (the
last entry) belongs to the unknown step ``V^k`` and carries ``a[-1] = 1``.
DIRK schemes are stored as lower-triangular Butcher tableaus and are
formulated with the stage slopes ``K^l`` as unknowns.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, InputError, StartupError

MULTISTEP_NAMES = ("euler", "am2", "bdf2", "bdf3", "bdf4")
DIRK_NAMES = ("dirk2", "dirk3", "dirk4")
SCHEME_NAMES = MULTISTEP_NAMES + DIRK_NAMES


@dataclass(frozen=True)
class SchemeSpec:
    """Coefficient table for one implicit scheme."""

    name: str
    kind: str  # "multistep" | "dirk"
    order: int
    a: np.ndarray = None  # multistep: l+1 coefficients, oldest to newest
    b: np.ndarray = None  # multistep weights / dirk quadrature weights
    A: np.ndarray = None  # dirk tableau (lower triangular)
    c: np.ndarray = None  # dirk abscissae

    @property
    def steps(self):
        """Number of previous solution values a multistep scheme needs."""
        return self.a.shape[0] - 1

    @property
    def stages(self):
        return self.A.shape[0]

    @property
    def implicit_weight(self):
        """Coefficient multiplying ``dt * J`` in the Newton matrix."""
        if self.kind == "multistep":
            return float(self.b[-1])
        raise InputError("implicit_weight of a DIRK scheme is per stage (A[l, l])")


def scheme_table(name):
    """Coefficient table for a named scheme.

    Multistep tables come from the standard order conditions.  The DIRK
    tableaus are fixed, stiffly accurate, L-stable SDIRK methods: the
    two-stage method with gamma = 1 - sqrt(2)/2, Alexander's three-stage
    third-order method, and the five-stage fourth-order method with
    gamma = 1/4 from the classical stiff-ODE literature.
    """
    name = name.lower()
    if name == "euler":
        return SchemeSpec("euler", "multistep", 1,
                          a=np.array([-1.0, 1.0]), b=np.array([0.0, 1.0]))
    if name == "am2":
        return SchemeSpec("am2", "multistep", 2,
                          a=np.array([-1.0, 1.0]), b=np.array([0.5, 0.5]))
    if name == "bdf2":
        return SchemeSpec("bdf2", "multistep", 2,
                          a=np.array([1.0 / 3.0, -4.0 / 3.0, 1.0]),
                          b=np.array([0.0, 0.0, 2.0 / 3.0]))
    if name == "bdf3":
        return SchemeSpec("bdf3", "multistep", 3,
                          a=np.array([-2.0 / 11.0, 9.0 / 11.0, -18.0 / 11.0, 1.0]),
                          b=np.array([0.0, 0.0, 0.0, 6.0 / 11.0]))
    if name == "bdf4":
        return SchemeSpec("bdf4", "multistep", 4,
                          a=np.array([3.0 / 25.0, -16.0 / 25.0, 36.0 / 25.0,
                                      -48.0 / 25.0, 1.0]),
                          b=np.array([0.0, 0.0, 0.0, 0.0, 12.0 / 25.0]))
    if name == "dirk2":
        g = 1.0 - math.sqrt(2.0) / 2.0
        A = np.array([[g, 0.0], [1.0 - g, g]])
        return SchemeSpec("dirk2", "dirk", 2, A=A, b=A[-1].copy(),
                          c=np.array([g, 1.0]))
    if name == "dirk3":
        # Alexander's L-stable SDIRK3: gamma is the (1/6, 1/2) root of
        # x^3 - 3 x^2 + 3/2 x - 1/6.
        g = 0.43586652150845899942
        c2 = 0.5 * (1.0 + g)
        b1 = -(6.0 * g * g - 16.0 * g + 1.0) / 4.0
        b2 = (6.0 * g * g - 20.0 * g + 5.0) / 4.0
        A = np.array([[g, 0.0, 0.0],
                      [c2 - g, g, 0.0],
                      [b1, b2, g]])
        return SchemeSpec("dirk3", "dirk", 3, A=A, b=A[-1].copy(),
                          c=np.array([g, c2, 1.0]))
    if name == "dirk4":
        # Five-stage stiffly accurate SDIRK4 with gamma = 1/4.
        A = np.array([
            [1.0 / 4.0, 0.0, 0.0, 0.0, 0.0],
            [1.0 / 2.0, 1.0 / 4.0, 0.0, 0.0, 0.0],
            [17.0 / 50.0, -1.0 / 25.0, 1.0 / 4.0, 0.0, 0.0],
            [371.0 / 1360.0, -137.0 / 2720.0, 15.0 / 544.0, 1.0 / 4.0, 0.0],
            [25.0 / 24.0, -49.0 / 48.0, 125.0 / 16.0, -85.0 / 12.0, 1.0 / 4.0],
        ])
        return SchemeSpec("dirk4", "dirk", 4, A=A, b=A[-1].copy(),
                          c=np.array([1.0 / 4.0, 3.0 / 4.0, 11.0 / 20.0,
                                      1.0 / 2.0, 1.0]))
    raise ConfigError(f"unknown scheme {name!r}; choose from {SCHEME_NAMES}")


def bootstrap_scheme(spec):
    """DIRK scheme of order >= the multistep order, used for startup steps."""
    if spec.kind != "multistep":
        raise InputError("bootstrap_scheme applies to multistep schemes")
    return scheme_table(f"dirk{max(2, spec.order)}")


@dataclass
class LinearizedSystem:
    """Rows of the Newton matrix and right-hand side at requested rows."""

    A_rows: sp.spmatrix  # len(rows) x n, sparsity = stencil + diagonal
    b: np.ndarray  # len(rows),


_identity_cache = {}


def _restrict_identity(n, rows):
    m = len(rows)
    if m == n and rows[0] == 0 and np.array_equal(rows, np.arange(n)):
        eye = _identity_cache.get(n)
        if eye is None:
            eye = sp.identity(n, format="csr")
            _identity_cache[n] = eye
        return eye
    return sp.csr_matrix((np.ones(m), (np.arange(m), rows)), shape=(m, n))


def assemble_euler(v_col, v_prev, dt, model, rows, c=0, t=0.0):
    """Implicit-Euler Newton system ``(I - dt J) delta = b`` at ``rows``.

    ``b(rows) = v_prev - v_col + dt F(v_col)`` evaluated at the rows.
    """
    if dt <= 0:
        raise InputError("assemble_euler: dt must be positive")
    rows = np.asarray(rows, dtype=int)
    J = model.jacobian_rows(v_col, c, t, rows)
    A = _restrict_identity(model.n, rows) - dt * J
    f = model.rhs_column(v_col, c, t)
    b = v_prev[rows] - v_col[rows] + dt * f[rows]
    return LinearizedSystem(A_rows=A.tocsr(), b=b)


def multistep_residual_rows(history, f_history, v_col, f_col, spec, dt, rows):
    """Residual ``sum a_j V^{k-j} - dt sum b_j F^{k-j}`` at ``rows``.

    ``history``/``f_history`` are ordered oldest to newest and cover the
    ``l`` previous steps; the current iterate enters through ``v_col`` and
    ``f_col``.  ``f_history`` entries may be None where ``b_j`` vanishes.
    """
    ell = spec.steps
    if len(history) < ell:
        raise StartupError(
            f"{spec.name} needs {ell} history states, got {len(history)}")
    R = spec.a[-1] * v_col[rows] - dt * spec.b[-1] * f_col[rows]
    for m in range(ell):
        R = R + spec.a[m] * history[m][rows]
        if spec.b[m] != 0.0:
            R = R - dt * spec.b[m] * f_history[m][rows]
    return R


def assemble_multistep(history, f_history, v_col, spec, dt, model, rows,
                       c=0, t=0.0):
    """Newton system for the multistep residual at ``rows``.

    ``A = I - dt b_l J(v_col)`` restricted to the rows; ``b = -R`` at the
    current iterate.  For implicit-Euler coefficients this reduces exactly
    to :func:`assemble_euler`.
    """
    if spec.kind != "multistep":
        raise InputError("assemble_multistep needs a multistep SchemeSpec")
    rows = np.asarray(rows, dtype=int)
    J = model.jacobian_rows(v_col, c, t, rows)
    A = _restrict_identity(model.n, rows) - (dt * spec.b[-1]) * J
    f_col = model.rhs_column(v_col, c, t)
    R = multistep_residual_rows(history, f_history, v_col, f_col, spec, dt, rows)
    return LinearizedSystem(A_rows=A.tocsr(), b=-R)


def dirk_stage_state(v_base, k_stages, k_iter, stage, spec, dt):
    """Argument of F in the DIRK stage residual for stage ``stage`` (0-based)."""
    state = v_base + (dt * spec.A[stage, stage]) * k_iter
    for m in range(stage):
        state = state + (dt * spec.A[stage, m]) * k_stages[m]
    return state


def assemble_dirk_stage(v_base, k_stages, k_iter, stage, spec, dt, model, rows,
                        c=0, t=0.0):
    """Newton system for the stage-slope residual ``K^l - F(stage state)``.

    The Jacobian is evaluated at the stage state
    ``V^{k-1} + dt sum_{m<l} a_lm K^m + dt a_ll K^l`` and the right-hand
    side is ``F(stage state) - K^l`` at the requested rows.
    """
    if spec.kind != "dirk":
        raise InputError("assemble_dirk_stage needs a DIRK SchemeSpec")
    if stage >= spec.stages:
        raise InputError("stage index out of range")
    if len(k_stages) < stage:
        raise StartupError("previous DIRK stages missing")
    rows = np.asarray(rows, dtype=int)
    state = dirk_stage_state(v_base, k_stages, k_iter, stage, spec, dt)
    J = model.jacobian_rows(state, c, t, rows)
    A = _restrict_identity(model.n, rows) - (dt * spec.A[stage, stage]) * J
    f = model.rhs_column(state, c, t)
    b = f[rows] - k_iter[rows]
    return LinearizedSystem(A_rows=A.tocsr(), b=b)


def dirk_update(v_base, k_stages, spec, dt):
    """Final DIRK update ``V^k = V^{k-1} + dt sum b_l K^l``."""
    v = v_base.copy()
    for m in range(spec.stages):
        v += (dt * spec.b[m]) * k_stages[m]
    return v
