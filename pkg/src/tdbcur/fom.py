"""Full-order reference integration and error metrics.

The full-order model treats each column (parameter sample) independently:
one Newton iteration per column per step, with the linearized systems
solved either by a cached sparse LU or by preconditioned GMRES.  Also
provides the exact matrix-exponential solution for linear models, an
explicit RK4 reference, and the relative Frobenius error metric.
"""

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .errors import (CapabilityError, ConfigError, InputError, MetricError,
                     StabilityError, StepError)
from .schemes import (assemble_dirk_stage, assemble_multistep, bootstrap_scheme,
                      dirk_update, scheme_table)

#: largest n for which the dense matrix exponential is attempted
EXPM_SIZE_LIMIT = 1024

#: direct sparse LU is used up to this size under solver="auto"
DIRECT_SIZE_LIMIT = 1024


class LinearSolver:
    """Solves the per-column Newton systems ``A x = b``.

    ``solver`` is "direct", "gmres" or "auto" (direct up to
    ``DIRECT_SIZE_LIMIT`` rows, GMRES above).  Direct factorizations are
    cached by a caller-supplied key when the matrix is known to be reused
    (linear models, fixed dt).
    """

    def __init__(self, solver="auto", rtol=1e-12):
        if solver not in ("auto", "direct", "gmres"):
            raise ConfigError(f"unknown solver {solver!r}")
        self.solver = solver
        self.rtol = rtol
        self._lu_cache = {}

    def _mode(self, n):
        if self.solver != "auto":
            return self.solver
        return "direct" if n <= DIRECT_SIZE_LIMIT else "gmres"

    def solve(self, A, b, cache_key=None, precond=None):
        n = A.shape[0]
        if self._mode(n) == "direct":
            if cache_key is not None:
                lu = self._lu_cache.get(cache_key)
                if lu is None:
                    lu = spla.splu(A.tocsc())
                    self._lu_cache[cache_key] = lu
                return lu.solve(b)
            return spla.spsolve(A.tocsc(), b)
        x, info = spla.gmres(A, b, rtol=self.rtol, atol=0.0, restart=50,
                             maxiter=500, M=precond)
        if info != 0:
            raise StepError(f"gmres did not converge (info={info})")
        return x


def _newton_column(assemble, v0, n, tol, max_iter, solver, cache_key=None,
                   precond=None):
    """Newton iteration on one column; ``assemble(v)`` returns the system.

    Converged when ``||delta||_2 / sqrt(n) <= tol * max(1, rms(v))``; the
    scale factor keeps the test meaningful for iterates far from unit
    size (e.g. stage slopes of stiff systems, where roundoff alone
    exceeds an absolute 1e-14).
    """
    v = v0.copy()
    prev = np.inf
    for it in range(max_iter):
        sysm = assemble(v)
        delta = solver.solve(sysm.A_rows, sysm.b, cache_key, precond)
        v += delta
        scale = max(1.0, np.linalg.norm(v) / np.sqrt(n))
        rel = np.linalg.norm(delta) / np.sqrt(n)
        if rel <= tol * scale:
            return v
        # accept stagnation at the attainable-accuracy floor: tiny updates
        # that have stopped contracting are roundoff noise, not remaining
        # residual; the floor grows with the Jacobian norm so it cannot be
        # a fixed multiple of machine epsilon
        if it >= 2 and rel <= 1e-9 * scale and rel > 0.25 * prev:
            return v
        prev = rel
    raise StepError("column Newton iteration did not converge",
                    residual=float(np.linalg.norm(delta) / np.sqrt(n)))


def dirk_step_column(model, c, v_base, spec, dt, t, tol, max_iter, solver):
    """One DIRK step of a single column; returns (v_new, stage slopes)."""
    rows = np.arange(model.n)
    precond = model.make_preconditioner(dt * spec.A[0, 0])
    k_stages = []
    for stage in range(spec.stages):
        t_stage = t + spec.c[stage] * dt
        if k_stages:
            k0 = k_stages[-1].copy()
        else:
            k0 = model.rhs_column(v_base, c, t)

        def assemble(k, stage=stage, t_stage=t_stage):
            return assemble_dirk_stage(v_base, k_stages, k, stage, spec, dt,
                                       model, rows, c, t_stage)

        cache_key = None
        if model.is_linear:
            cache_key = ("dirk", round(dt * spec.A[stage, stage], 15))
        k = _newton_column(assemble, k0, model.n, tol, max_iter, solver,
                           cache_key, precond)
        k_stages.append(k)
    return dirk_update(v_base, k_stages, spec, dt), k_stages


def multistep_step_column(model, c, hist_c, f_hist_c, spec, dt, t_new, tol,
                          max_iter, solver):
    """One multistep step of a single column; history is oldest to newest."""
    rows = np.arange(model.n)
    precond = model.make_preconditioner(dt * spec.b[-1])

    def assemble(v):
        return assemble_multistep(hist_c, f_hist_c, v, spec, dt, model, rows,
                                  c, t_new)

    cache_key = None
    if model.is_linear:
        cache_key = ("ms", round(dt * spec.b[-1], 15))
    return _newton_column(assemble, hist_c[-1].copy(), model.n, tol, max_iter,
                          solver, cache_key, precond)


class FomIntegrator:
    """Implicit full-order integrator over all columns.

    Multistep schemes bootstrap their startup steps with a DIRK scheme of
    at least the same order, so the overall accuracy order is preserved
    from the first step.
    """

    def __init__(self, model, scheme="am2", dt=0.01, tol=1e-14, max_iter=25,
                 solver="auto", t0=0.0, V0=None):
        if dt <= 0:
            raise ConfigError("dt must be positive")
        self.model = model
        self.spec = scheme_table(scheme) if isinstance(scheme, str) else scheme
        self.dt = float(dt)
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self.solver = LinearSolver(solver, rtol=max(self.tol / 10.0, 1e-13))
        self.t = float(t0)
        V0 = model.initial_condition() if V0 is None else np.array(V0, dtype=float)
        self.history = [V0]
        self.f_history = [None]
        if self.spec.kind == "multistep":
            self._boot = bootstrap_scheme(self.spec)
            self._needs_f = bool(np.any(self.spec.b[:-1] != 0.0))
        else:
            self._boot = None
            self._needs_f = False
        if self._needs_f:
            self.f_history = [self._f_matrix(V0, self.t)]

    @property
    def V(self):
        return self.history[-1]

    def _f_matrix(self, V, t):
        F = np.empty_like(V)
        for c in range(self.model.s):
            F[:, c] = self.model.rhs_column(V[:, c], c, t)
        return F

    def _step_dirk(self, spec):
        Vp = self.history[-1]
        Vn = np.empty_like(Vp)
        for c in range(self.model.s):
            Vn[:, c], _ = dirk_step_column(self.model, c, Vp[:, c], spec,
                                           self.dt, self.t, self.tol,
                                           self.max_iter, self.solver)
        return Vn

    def _step_multistep(self):
        spec = self.spec
        Vn = np.empty_like(self.history[-1])
        t_new = self.t + self.dt
        for c in range(self.model.s):
            hist_c = [H[:, c] for H in self.history[-spec.steps:]]
            f_hist_c = [None if F is None else F[:, c]
                        for F in self.f_history[-spec.steps:]]
            Vn[:, c] = multistep_step_column(self.model, c, hist_c, f_hist_c,
                                             spec, self.dt, t_new, self.tol,
                                             self.max_iter, self.solver)
        return Vn

    def step(self):
        """Advance all columns by one dt; returns the new state matrix."""
        if self.spec.kind == "dirk":
            Vn = self._step_dirk(self.spec)
        elif len(self.history) < self.spec.steps:
            Vn = self._step_dirk(self._boot)
        else:
            Vn = self._step_multistep()
        self.t += self.dt
        self.history.append(Vn)
        self.f_history.append(self._f_matrix(Vn, self.t) if self._needs_f
                              else None)
        keep = 1 if self.spec.kind == "dirk" else self.spec.steps
        del self.history[:-keep], self.f_history[:-keep]
        return Vn

    def run(self, T, observer=None):
        """Integrate to time ``t0 + T``; optional per-step observer(t, V)."""
        n_steps = int(round(T / self.dt))
        if abs(n_steps * self.dt - T) > 1e-9 * max(1.0, T):
            raise ConfigError("T must be an integer multiple of dt")
        for _ in range(n_steps):
            self.step()
            if observer is not None:
                observer(self.t, self.history[-1])
        return self.history[-1]


def exact_linear_solution(model, V0, t):
    """``expm(L t) @ V0`` for a linear model (dense expm, n <= 1024)."""
    if not model.is_linear:
        raise InputError("exact_linear_solution needs a linear model")
    if model.n > EXPM_SIZE_LIMIT:
        raise CapabilityError(
            f"dense matrix exponential limited to n <= {EXPM_SIZE_LIMIT}")
    P = scipy.linalg.expm(model.linear_operator().toarray() * t)
    return P @ np.asarray(V0, dtype=float)


def exact_linear_propagator(model, dt):
    """One-step dense propagator ``expm(L dt)`` for repeated application."""
    if not model.is_linear:
        raise InputError("exact_linear_propagator needs a linear model")
    if model.n > EXPM_SIZE_LIMIT:
        raise CapabilityError(
            f"dense matrix exponential limited to n <= {EXPM_SIZE_LIMIT}")
    return scipy.linalg.expm(model.linear_operator().toarray() * dt)


def rk4_reference(model, V0, dt, n_steps, t0=0.0, observer=None):
    """Classical explicit RK4 over all columns.

    Raises StabilityError as soon as the state leaves the finite range,
    reporting the step at which the blow-up was detected.
    """
    V = np.array(V0, dtype=float)
    t = t0

    step_now = [0]

    def f(V, t):
        if not np.all(np.isfinite(V)):
            raise StabilityError(
                f"rk4 stage state became non-finite at step {step_now[0] + 1}")
        F = np.empty_like(V)
        for c in range(model.s):
            F[:, c] = model.rhs_column(V[:, c], c, t)
        return F

    for k in range(n_steps):
        step_now[0] = k
        k1 = f(V, t)
        k2 = f(V + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = f(V + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = f(V + dt * k3, t + dt)
        V = V + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t0 + (k + 1) * dt
        if not np.all(np.isfinite(V)):
            raise StabilityError(f"rk4 state became non-finite at step {k + 1}"
                                 f" (t={t:.6g})")
        if observer is not None:
            observer(t, V)
    return V


def relative_error(V_ref, V):
    """Relative Frobenius error ``||V_ref - V||_F / ||V_ref||_F``."""
    V_ref = np.asarray(V_ref, dtype=float)
    V = np.asarray(V, dtype=float)
    if V_ref.shape != V.shape:
        raise InputError("relative_error: shape mismatch")
    nrm = np.linalg.norm(V_ref)
    if nrm == 0.0:
        raise MetricError("relative_error undefined for a zero reference")
    return float(np.linalg.norm(V_ref - V) / nrm)
