"""Implicit low-rank time integration with CUR collocation.

One step advances a rank-r factorized state ``U diag(sigma) Y^T``:

1. sample column indices by DEIM on the right singular vectors,
2. advance the sampled columns with the full-order implicit scheme,
3. build an orthonormal correction basis from the sampled columns (and
   stage slopes for one-step schemes),
4. select collocation rows by DEIM with optional greedy oversampling,
5. solve the implicit scheme's rows at the collocation points inside the
   correction basis (Newton on a small least-squares system per column),
6. reassemble the factorization from the sampled columns and rows with
   the stable CUR procedure, optionally adapting the rank.

Away from diagnostics, no dense n x s matrix is ever formed: the row
update touches only the collocation rows and their stencil neighbors.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import CapabilityError, ConfigError, InputError
from .factorization import (LowRankState, TruncationRule, stable_cur,
                            truncated_svd)
from .fom import FomIntegrator, dirk_step_column, multistep_step_column, LinearSolver
from .models import ProblemInstance
from .sampling import SelectionIndices, deim, find_adjacent, oversample
from .schemes import bootstrap_scheme, scheme_table

#: largest row dimension accepted by the dense least-squares oracle
ORACLE_SIZE_LIMIT = 4096


@dataclass
class CorrectionBasis:
    """Orthonormal basis spanning the step's in-sample correction space."""

    U: np.ndarray       # n x r_delta, orthonormal
    sigma: np.ndarray   # singular values of the stacked sample matrix

    @property
    def r_delta(self):
        return self.U.shape[1]


@dataclass
class StepReport:
    """Diagnostics of one low-rank step."""

    t: float
    rank: int
    r_delta: int
    sigma: np.ndarray
    indices: SelectionIndices
    row_iterations: int
    row_residuals: list          # max column-wise update norm per iteration
    rank_change: int = 0
    collocation_residuals: list = field(default_factory=list)
    full_residuals: list = field(default_factory=list)


def select_columns(Y, target_r):
    """Sample column indices: DEIM on the right singular vectors.

    ``target_r`` may exceed the basis width by one; the extra index is
    then chosen by the greedy oversampling criterion so the sampled
    submatrix of ``Y`` stays well conditioned.
    """
    Y = np.asarray(Y, dtype=float)
    r = Y.shape[1]
    if target_r < 1 or target_r > Y.shape[0]:
        raise InputError("select_columns: target rank out of range")
    if target_r > r + 1:
        raise InputError("select_columns: rank can grow by at most one")
    base = deim(Y[:, : min(target_r, r)])
    if target_r > r:
        base = oversample(Y, base, target_r - r)
    return base


def build_correction_basis(blocks, machine_eps=None):
    """Orthonormal basis of the column span of the stacked sample blocks.

    The retained width follows the pseudoinverse truncation rule: keep
    singular values above ``machine_eps * max(dims) * sigma_1``.
    """
    M = np.hstack(blocks)
    rule = TruncationRule(mode="penrose") if machine_eps is None else \
        TruncationRule(mode="penrose", machine_eps=machine_eps)
    U, sigma, _ = truncated_svd(M, rule)
    return CorrectionBasis(U=U, sigma=sigma)


class _RowSystem:
    """Shared scaffolding of the reduced collocation row solve.

    Holds the kernel for rows ``p`` over the compact index set
    ``idx = sort(p + p_a)``, the correction basis restricted to the
    pattern, and the batched small-matrix solve.
    """

    def __init__(self, model, basis, sel, dt_coef):
        self.model = model
        self.basis = basis
        self.sel = sel
        self.dt_coef = float(dt_coef)
        self.idx = np.union1d(sel.p, sel.p_a)
        self.kernel = model.row_kernel(sel.p, self.idx)
        self.cols = np.arange(model.s)
        U = basis.U
        self.U_p = U[sel.p]                       # n_p x r_delta
        self.U_idx = U[self.idx]                  # n_idx x r_delta
        # basis values on the Jacobian pattern, masked like the Jacobian
        self.U_pat = U[self.kernel.pattern_glob] * self.kernel.mask[:, :, None]
        self.n_p = sel.p.shape[0]

    def reduced_matrices(self, Vloc, t):
        """``(I - coef J) U`` at the collocation rows; (m, n_p, r_delta)."""
        vals = self.kernel.jac_values(Vloc, self.cols, t) * self.kernel.mask
        JU = np.einsum("mpk,pkr->mpr", vals, self.U_pat)
        return self.U_p[None, :, :] - self.dt_coef * JU

    def solve(self, A_all, B):
        """Per-column solve of ``A_c z_c = B[:, c]``; returns Z (r_delta x s).

        Square systems (no oversampling) use a batched direct solve; tall
        systems fall back to per-column least squares.
        """
        r_delta = self.U_p.shape[1]
        s = B.shape[1]
        if A_all.shape[0] == 1:
            Z, _, _, _ = scipy.linalg.lstsq(A_all[0], B, lapack_driver="gelsy")
            return Z
        if self.n_p == r_delta:
            return np.linalg.solve(A_all, B.T[:, :, None])[:, :, 0].T
        Z = np.empty((r_delta, s))
        for c in range(s):
            Z[:, c] = scipy.linalg.lstsq(A_all[c], B[:, c],
                                         lapack_driver="gelsy")[0]
        return Z


class TdbCurIntegrator:
    """Low-rank implicit integrator for one problem instance.

    Parameters
    ----------
    model : ProblemInstance
    scheme : scheme name or SchemeSpec
    dt : time-step size
    rank : fixed rank, or None to pick the initial rank from thresholds
    e : number of oversampled collocation rows
    eps_t : row-iteration stopping tolerance (per-column update norm)
    thresholds : (eps_l, eps_u) pair enabling rank adaptivity, or None
    trace_residuals : when True, dense scheme residuals are recorded per
        row iteration (diagnostics only; this path forms n x s matrices)
    """

    def __init__(self, model, scheme="dirk2", dt=0.01, rank=None, e=0,
                 eps_t=1e-13, thresholds=None, tol=1e-14, max_iter=25,
                 max_row_iter=6, solver="auto", t0=0.0, V0=None,
                 trace_residuals=False):
        if not isinstance(model, ProblemInstance):
            raise ConfigError("model must be a ProblemInstance")
        if dt <= 0:
            raise ConfigError("dt must be positive")
        if e < 0:
            raise ConfigError("e must be nonnegative")
        self.model = model
        self.spec = scheme_table(scheme) if isinstance(scheme, str) else scheme
        self.dt = float(dt)
        self.e = int(e)
        self.eps_t = float(eps_t)
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self.max_row_iter = int(max_row_iter)
        self.solver = LinearSolver(solver, rtol=max(float(tol) / 10.0, 1e-13))
        self.trace_residuals = bool(trace_residuals)
        self.thresholds = None
        if thresholds is not None:
            eps_l, eps_u = thresholds
            if not 0.0 < eps_l < eps_u:
                raise ConfigError("thresholds need 0 < eps_l < eps_u")
            self.thresholds = (float(eps_l), float(eps_u))

        V0 = model.initial_condition() if V0 is None else np.array(V0, float)
        if rank is not None:
            rule = TruncationRule(mode="fixed_rank", rank=int(rank))
        elif self.thresholds is not None:
            rule = TruncationRule(mode="threshold_pair",
                                  eps_l=self.thresholds[0],
                                  eps_u=self.thresholds[1])
        else:
            raise ConfigError("give either a fixed rank or thresholds")
        U, sigma, Y = truncated_svd(V0, rule)
        self.history = [LowRankState(U=U, sigma=sigma, Y=Y, t=float(t0))]
        self._prev_s = None
        self._target_r = self.history[-1].r
        self.reports = []
        if self.spec.kind == "multistep":
            self._boot = bootstrap_scheme(self.spec)

    # -- convenience -------------------------------------------------------

    @property
    def state(self):
        return self.history[-1]

    @property
    def t(self):
        return self.history[-1].t

    def rank_trace(self):
        return [rep.rank for rep in self.reports]

    # -- column phase ------------------------------------------------------

    def advance_columns(self, s_idx, spec):
        """Full-order advance of the sampled columns.

        Returns the new column values and, for one-step schemes, the list
        of stage-slope blocks (each n x len(s_idx)).
        """
        n = self.model.n
        t = self.t
        cols_new = np.empty((n, s_idx.size))
        if spec.kind == "dirk":
            k_blocks = [np.empty((n, s_idx.size)) for _ in range(spec.stages)]
            base = self.state.reconstruct(cols=s_idx)
            for j, c in enumerate(s_idx):
                v, ks = dirk_step_column(self.model, int(c), base[:, j], spec,
                                         self.dt, t, self.tol, self.max_iter,
                                         self.solver)
                cols_new[:, j] = v
                for m in range(spec.stages):
                    k_blocks[m][:, j] = ks[m]
            return cols_new, k_blocks

        hist_blocks = [st.reconstruct(cols=s_idx)
                       for st in self.history[-spec.steps:]]
        need_f = np.flatnonzero(spec.b[:-1] != 0.0)
        t_hist = [st.t for st in self.history[-spec.steps:]]
        for j, c in enumerate(s_idx):
            hist_c = [H[:, j] for H in hist_blocks]
            f_hist_c = [None] * spec.steps
            for m in need_f:
                f_hist_c[m] = self.model.rhs_column(hist_c[m], int(c),
                                                    t_hist[m])
            cols_new[:, j] = multistep_step_column(
                self.model, int(c), hist_c, f_hist_c, spec, self.dt,
                t + self.dt, self.tol, self.max_iter, self.solver)
        return cols_new, None

    # -- row phase ---------------------------------------------------------

    def _select_rows(self, basis):
        p = deim(basis.U)
        p = oversample(basis.U, p, self.e)
        p_a = find_adjacent(p, self.model.stencil())
        return SelectionIndices(s=np.empty(0, dtype=int), p=np.sort(p),
                                p_a=p_a, e=self.e)

    def _row_norm(self, dV_p):
        """Per-column stopping measure of a collocation-row update."""
        return np.linalg.norm(dV_p, axis=0) / dV_p.shape[0]

    def solve_rows_multistep(self, basis, sel, spec, report):
        """Collocation row solve for a multistep scheme.

        Returns the converged values of the new state at the collocation
        rows ``sel.p`` (all columns).
        """
        sys_ = _RowSystem(self.model, basis, sel, self.dt * spec.b[-1])
        idx, kernel = sys_.idx, sys_.kernel
        t_new = self.t + self.dt
        hist_loc = [st.reconstruct(rows=idx)
                    for st in self.history[-spec.steps:]]
        # fixed part of the residual at rows p: history terms
        R_fix = np.zeros((sel.p.size, self.model.s))
        for m in range(spec.steps):
            R_fix += spec.a[m] * hist_loc[m][kernel.p_loc]
            if spec.b[m] != 0.0:
                st = self.history[-spec.steps:][m]
                R_fix -= self.dt * spec.b[m] * kernel.rhs(hist_loc[m],
                                                          sys_.cols, st.t)
        Vloc = hist_loc[-1].copy()
        tracer = _ResidualTracer(self, basis, sel, spec) \
            if self.trace_residuals else None
        for it in range(self.max_row_iter):
            F = kernel.rhs(Vloc, sys_.cols, t_new)
            R = R_fix + spec.a[-1] * Vloc[kernel.p_loc] \
                - self.dt * spec.b[-1] * F
            if tracer is not None:
                tracer.record(report, R)
            A_all = sys_.reduced_matrices(Vloc, t_new)
            Z = sys_.solve(A_all, -R)
            dV = sys_.U_idx @ Z
            Vloc += dV
            if tracer is not None:
                tracer.apply(Z)
            eps = self._row_norm(sys_.U_p @ Z)
            report.row_residuals.append(float(np.max(eps)))
            report.row_iterations = it + 1
            if np.all(eps <= self.eps_t):
                break
        return Vloc[kernel.p_loc]

    def solve_rows_dirk(self, basis, sel, spec, report):
        """Collocation row solve for a one-step (DIRK) scheme."""
        idx = np.union1d(sel.p, sel.p_a)
        base_loc = self.state.reconstruct(rows=idx)
        k_loc = []
        kernel = None
        for stage in range(spec.stages):
            coef = self.dt * spec.A[stage, stage]
            sys_ = _RowSystem(self.model, basis, sel, coef)
            kernel = sys_.kernel
            t_stage = self.t + spec.c[stage] * self.dt
            k_cur = k_loc[-1].copy() if k_loc else np.zeros_like(base_loc)
            drift = base_loc.copy()
            for m in range(stage):
                drift += (self.dt * spec.A[stage, m]) * k_loc[m]
            for it in range(self.max_row_iter):
                state_loc = drift + coef * k_cur
                F = kernel.rhs(state_loc, sys_.cols, t_stage)
                R = k_cur[kernel.p_loc] - F
                A_all = sys_.reduced_matrices(state_loc, t_stage)
                Z = sys_.solve(A_all, -R)
                k_cur += sys_.U_idx @ Z
                eps = self._row_norm(sys_.U_p @ Z)
                if stage == spec.stages - 1:
                    report.row_residuals.append(float(np.max(eps)))
                    report.row_iterations = it + 1
                if np.all(eps <= self.eps_t):
                    break
            k_loc.append(k_cur)
        v_new = base_loc.copy()
        for m in range(spec.stages):
            v_new += (self.dt * spec.b[m]) * k_loc[m]
        return v_new[kernel.p_loc]

    def solve_rows_least_squares_oracle(self, basis, sel, spec, V_hist_full):
        """Dense regression variant of the multistep row solve (testing aid).

        Solves the same reduced linear system over all rows by least
        squares instead of collocation at ``sel.p``; one Newton sweep from
        the previous state.  Only for moderate sizes.
        """
        if self.model.n > ORACLE_SIZE_LIMIT:
            raise CapabilityError("least-squares oracle limited to "
                                  f"n <= {ORACLE_SIZE_LIMIT}")
        if spec.kind != "multistep":
            raise InputError("oracle implemented for multistep schemes")
        t_new = self.t + self.dt
        coef = self.dt * spec.b[-1]
        V_new = np.empty_like(V_hist_full[-1])
        for c in range(self.model.s):
            v = V_hist_full[-1][:, c].copy()
            R = spec.a[-1] * v - coef * self.model.rhs_column(v, c, t_new)
            for m in range(spec.steps):
                R += spec.a[m] * V_hist_full[m][:, c]
                if spec.b[m] != 0.0:
                    R -= self.dt * spec.b[m] * self.model.rhs_column(
                        V_hist_full[m][:, c], c, self.t)
            J = self.model.jacobian_rows(v, c, t_new)
            A = basis.U - coef * (J @ basis.U)
            z, _, _, _ = scipy.linalg.lstsq(A, -R, lapack_driver="gelsd")
            V_new[:, c] = v + basis.U @ z
        return V_new

    # -- full step ---------------------------------------------------------

    def _decide_rank(self, sigma):
        """Next target rank from the tail-energy proxy of ``sigma``."""
        if self.thresholds is None:
            return sigma.shape[0]
        eps_l, eps_u = self.thresholds
        r = sigma.shape[0]
        total = np.sqrt(np.sum(sigma**2))
        proxy = sigma[-1] / total
        if proxy > eps_u and r < min(self.model.s, self.model.n):
            return r + 1
        if proxy < eps_l and r > 1:
            # only decrease when the shrunk state would still sit inside
            # the band; otherwise the next step would raise the rank right
            # back and the trace would chatter between r-1 and r
            if sigma[-2] / total <= eps_u:
                return r - 1
        return r

    def step(self):
        """Advance the factorized state by one dt; returns a StepReport."""
        spec = self.spec
        if spec.kind == "multistep" and len(self.history) < spec.steps:
            spec = self._boot

        s_idx = select_columns(self.state.Y, self._target_r)
        cols_new, k_blocks = self.advance_columns(s_idx, spec)

        if spec.kind == "dirk":
            blocks = [cols_new] + k_blocks
        else:
            prev_s = self._prev_s if self._prev_s is not None else s_idx
            blocks = [self.state.reconstruct(cols=prev_s), cols_new]
        basis = build_correction_basis(blocks)

        rows_sel = self._select_rows(basis)
        sel = SelectionIndices(s=np.sort(s_idx), p=rows_sel.p,
                               p_a=rows_sel.p_a, e=self.e)

        report = StepReport(t=self.t + self.dt, rank=0,
                            r_delta=basis.r_delta, sigma=None, indices=sel,
                            row_iterations=0, row_residuals=[])
        if spec.kind == "dirk":
            rows_new = self.solve_rows_dirk(basis, sel, spec, report)
        else:
            rows_new = self.solve_rows_multistep(basis, sel, spec, report)

        # stable_cur wants the sampled columns ordered like sel.p x all
        # columns; reorder cols_new to the sorted column indices
        order = np.argsort(s_idx)
        new_state = stable_cur(cols_new[:, order], rows_new, sel.p,
                               t=self.t + self.dt)
        report.rank = new_state.r
        report.sigma = new_state.singular_values()
        prev_r = self._target_r
        self._target_r = self._decide_rank(new_state.sigma)
        report.rank_change = self._target_r - prev_r

        self.history.append(new_state)
        keep = 1 if self.spec.kind == "dirk" else self.spec.steps
        del self.history[:-keep]
        self._prev_s = np.sort(s_idx)
        self.reports.append(report)
        return report

    def run(self, T, observer=None):
        """Integrate to ``t0 + T``; optional observer(report, state)."""
        n_steps = int(round(T / self.dt))
        if abs(n_steps * self.dt - T) > 1e-9 * max(1.0, T):
            raise ConfigError("T must be an integer multiple of dt")
        for _ in range(n_steps):
            rep = self.step()
            if observer is not None:
                observer(rep, self.state)
        return self.state


class _ResidualTracer:
    """Dense residual bookkeeping for diagnostics runs (multistep only).

    Maintains the full iterate ``V = V_prev + U_delta @ Z_cum`` so both
    the collocation-row residual and the residual over every matrix entry
    can be reported per row iteration, as root-mean-square values.
    """

    def __init__(self, integ, basis, sel, spec):
        self.integ = integ
        self.basis = basis
        self.spec = spec
        model = integ.model
        self.hist_full = [st.reconstruct()
                          for st in integ.history[-spec.steps:]]
        self.t_hist = [st.t for st in integ.history[-spec.steps:]]
        self.V = self.hist_full[-1].copy()
        self.t_new = integ.t + integ.dt

    def _f_full(self, V, t):
        model = self.integ.model
        F = np.empty_like(V)
        for c in range(model.s):
            F[:, c] = model.rhs_column(V[:, c], c, t)
        return F

    def apply(self, Z):
        self.V += self.basis.U @ Z

    def record(self, report, R_rows):
        spec, dt = self.spec, self.integ.dt
        R = spec.a[-1] * self.V - dt * spec.b[-1] * self._f_full(self.V,
                                                                self.t_new)
        for m in range(spec.steps):
            R += spec.a[m] * self.hist_full[m]
            if spec.b[m] != 0.0:
                R -= dt * spec.b[m] * self._f_full(self.hist_full[m],
                                                   self.t_hist[m])
        report.collocation_residuals.append(
            float(np.linalg.norm(R_rows) / np.sqrt(R_rows.size)))
        report.full_residuals.append(
            float(np.linalg.norm(R) / np.sqrt(R.size)))


def integrate(model, scheme, dt, T, rank=None, e=0, thresholds=None,
              eps_t=1e-13, solver="auto", warmup_T=0.0, observer=None,
              **kwargs):
    """Convenience driver: optional dense warm-up phase, then low-rank run.

    ``warmup_T`` integrates the full-order model first (useful when the
    initial condition is a rank-deficient perturbation whose dynamics
    only unfold after a short transient), then compresses and continues
    with the low-rank integrator.  Returns the integrator, positioned at
    time ``T``.
    """
    t0, V0 = 0.0, None
    if warmup_T > 0.0:
        fom = FomIntegrator(model, scheme=scheme if isinstance(scheme, str)
                            else scheme.name, dt=dt, solver=solver)
        V0 = fom.run(warmup_T)
        t0 = fom.t
    integ = TdbCurIntegrator(model, scheme=scheme, dt=dt, rank=rank, e=e,
                             thresholds=thresholds, eps_t=eps_t,
                             solver=solver, t0=t0, V0=V0, **kwargs)
    integ.run(T - t0, observer=observer)
    return integ
