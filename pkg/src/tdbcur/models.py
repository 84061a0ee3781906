"""Parametric PDE problem definitions.

Each problem discretizes a random PDE with second-order central finite
differences: rows of the state matrix are spatial degrees of freedom,
columns are parameter samples.  Three instances are provided:

* ``advdiff1d``  -- linear advection-diffusion, Dirichlet boundaries,
  random Gaussian-bump initial condition (exact rank d).
* ``burgers1d``  -- viscous Burgers, Dirichlet boundaries, random
  Karhunen-Loeve perturbation of a deterministic profile.
* ``grayscott2d`` -- two-species reaction-diffusion on a periodic 2-D
  grid with a random reaction coefficient per sample, state stacked
  ``[u; v]`` within each column.

Dirichlet boundaries are handled as frozen rows: the boundary rows of F
and of the Jacobian are identically zero, so boundary values never move.

Instances are immutable after construction; ``rhs_column``,
``jacobian_rows`` and the batched row kernels are pure and re-entrant.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, InputError


class RowKernel:
    """Batched evaluation of F and Jacobian rows from compact state values.

    Built for a fixed row set ``p`` and an available index set ``idx``
    (which must cover the stencil of every row in ``p``).  State values
    are passed as ``Vloc`` of shape ``(len(idx), m)`` holding the state at
    the ``idx`` rows for ``m`` columns; nothing of size n x s is formed.

    ``pattern`` is the fixed Jacobian sparsity of the rows: global column
    indices of shape ``(len(p), K)`` with a 0/1 ``mask`` for rows whose
    stencil is shorter (frozen boundary rows have an all-zero mask).
    """

    def __init__(self, model, p, idx=None):
        self.model = model
        self.p = np.asarray(p, dtype=int)
        glob, mask = model._jac_pattern(self.p)
        self.pattern_glob = glob
        self.mask = mask
        if idx is None:
            self.idx = None
            self.pattern_loc = glob
            self.p_loc = self.p
        else:
            self.idx = np.asarray(idx, dtype=int)
            safe = np.where(mask > 0, glob, self.idx[0])
            self.pattern_loc = np.searchsorted(self.idx, safe)
            if np.any(self.idx[self.pattern_loc] != safe):
                raise InputError("row kernel: idx does not cover the stencil of p")
            self.p_loc = np.searchsorted(self.idx, self.p)
            if np.any(self.idx[self.p_loc] != self.p):
                raise InputError("row kernel: idx does not contain p")

    def rhs(self, Vloc, cols, t=0.0):
        """F at rows ``p`` for the given columns; shape (len(p), m)."""
        return self.model._rhs_rows(self, Vloc, cols, t)

    def jac_values(self, Vloc, cols, t=0.0):
        """Jacobian entries aligned with ``pattern``; shape (m, len(p), K).

        Linear models return a leading dimension of 1 (shared by all
        columns).
        """
        return self.model._jac_rows(self, Vloc, cols, t)

    def gather(self, Vloc, k):
        """Values of the k-th pattern neighbor for each row; (len(p), m)."""
        return Vloc[self.pattern_loc[:, k]]


class ProblemInstance:
    """Base class for the discretized random PDEs."""

    is_linear = False
    name = "base"

    def __init__(self, n, s, d, seed):
        if n < 3 or s < 1:
            raise ConfigError("need n >= 3 and s >= 1")
        self.n = int(n)
        self.s = int(s)
        self.d = int(d)
        self.seed = int(seed)
        self._full_kernel_cache = None
        # one deterministic stream per sample so columns are reproducible
        # independently of evaluation order
        children = np.random.SeedSequence(self.seed).spawn(self.s)
        self._rngs = [np.random.default_rng(c) for c in children]
        self.xi = self._sample_parameters()

    # -- interface implemented by subclasses -------------------------------

    def _sample_parameters(self):
        raise NotImplementedError

    def _jac_pattern(self, rows):
        raise NotImplementedError

    def _rhs_rows(self, kernel, Vloc, cols, t):
        raise NotImplementedError

    def _jac_rows(self, kernel, Vloc, cols, t):
        raise NotImplementedError

    def initial_condition(self):
        raise NotImplementedError

    def params(self):
        """Model parameter block for run metadata."""
        raise NotImplementedError

    # -- generic operations built on the row kernels -----------------------

    def row_kernel(self, p, idx=None):
        return RowKernel(self, p, idx)

    def _full_kernel(self):
        if self._full_kernel_cache is None:
            self._full_kernel_cache = RowKernel(self, np.arange(self.n))
        return self._full_kernel_cache

    def rhs_column(self, v, c, t=0.0):
        """F(v) for sample ``c`` as a full column."""
        if not np.all(np.isfinite(v)):
            raise InputError("rhs_column: non-finite state")
        k = self._full_kernel()
        return k.rhs(np.asarray(v, dtype=float)[:, None], np.array([c]), t)[:, 0]

    def jacobian_rows(self, v, c, t=0.0, rows=None):
        """Sparse Jacobian rows ``J(rows, :)`` at state ``v`` for sample ``c``."""
        if self.is_linear:
            # state-independent Jacobian: build once, slice thereafter
            if getattr(self, "_jac_cache", None) is None:
                self._jac_cache = self._build_jacobian(v, c, t)
            J = self._jac_cache
            return J if rows is None else J[np.asarray(rows, dtype=int)]
        return self._build_jacobian(v, c, t, rows)

    def _build_jacobian(self, v, c, t=0.0, rows=None):
        if rows is not None:
            rows = np.asarray(rows, dtype=int)
            if rows.size == self.n and rows[0] == 0 and rows[-1] == self.n - 1:
                rows = None  # a full-row request reuses the cached kernel
        if rows is None:
            kernel = self._full_kernel()
        else:
            kernel = RowKernel(self, rows)
        vals = kernel.jac_values(np.asarray(v, dtype=float)[:, None],
                                 np.array([c]), t)[0]
        vals = vals * kernel.mask
        m, K = kernel.pattern_glob.shape
        struct = getattr(kernel, "_csr_struct", None)
        if struct is None:
            # fixed sparsity: sort each pattern row once so later calls
            # only need to scatter values into a ready-made CSR skeleton
            order = np.argsort(kernel.pattern_glob, axis=1, kind="stable")
            indices = np.take_along_axis(kernel.pattern_glob, order, axis=1)
            has_dups = bool(np.any(np.diff(indices, axis=1) == 0))
            indptr = np.arange(0, (m + 1) * K, K)
            struct = (indptr, indices.ravel(), order, has_dups)
            kernel._csr_struct = struct
        indptr, indices, order, has_dups = struct
        data = np.take_along_axis(vals, order, axis=1).ravel()
        J = sp.csr_matrix((data, indices, indptr), shape=(m, self.n))
        if has_dups:
            J.sum_duplicates()
        return J

    def stencil(self):
        """Per-row neighbor lists (self excluded); frozen rows are empty."""
        if getattr(self, "_stencil_cache", None) is None:
            glob, mask = self._jac_pattern(np.arange(self.n))
            out = []
            for i in range(self.n):
                nb = glob[i][(mask[i] > 0) & (glob[i] != i)]
                out.append(np.unique(nb))
            self._stencil_cache = out
        return self._stencil_cache

    def make_preconditioner(self, coef):
        """Optional preconditioner for Krylov column solves; None by default."""
        return None


def _columnwise_standard_normal(rngs, d):
    return np.vstack([rng.standard_normal(d) for rng in rngs])


class AdvectionDiffusion1D(ProblemInstance):
    """Linear advection-diffusion on [0, 1] with homogeneous Dirichlet BCs.

    dv/dt + velocity dv/dx = alpha d2v/dx2, central second-order
    differences.  The default coefficients give a slowest decay rate of
    about 0.35 and an explicit fourth-order Runge-Kutta stability limit
    near dt = 1.7e-3 on the default grid.
    """

    is_linear = True
    name = "advdiff1d"

    def __init__(self, n=201, s=32, d=20, alpha=0.01, velocity=0.1, seed=0):
        self.alpha = float(alpha)
        self.velocity = float(velocity)
        super().__init__(n, s, d, seed)
        self.x = np.linspace(0.0, 1.0, self.n)
        self.dx = self.x[1] - self.x[0]
        lo = self.alpha / self.dx**2 + self.velocity / (2.0 * self.dx)
        di = -2.0 * self.alpha / self.dx**2
        up = self.alpha / self.dx**2 - self.velocity / (2.0 * self.dx)
        self._coef = (di, lo, up)
        L = sp.diags([np.full(self.n - 1, lo), np.full(self.n, di),
                      np.full(self.n - 1, up)], offsets=[-1, 0, 1], format="lil")
        L[0, :] = 0.0
        L[-1, :] = 0.0
        self.L = L.tocsr()

    def _sample_parameters(self):
        return _columnwise_standard_normal(self._rngs, self.d)

    def linear_operator(self):
        return self.L

    def initial_condition(self):
        x = np.linspace(0.0, 1.0, self.n)
        x0 = np.linspace(0.0, 1.0, self.d)
        G = np.exp(-((x[:, None] - x0[None, :]) / 0.5) ** 2) * (x * (1.0 - x))[:, None]
        return G @ self.xi.T

    def _jac_pattern(self, rows):
        glob = np.stack([rows, np.clip(rows - 1, 0, self.n - 1),
                         np.clip(rows + 1, 0, self.n - 1)], axis=1)
        interior = ((rows > 0) & (rows < self.n - 1)).astype(float)
        mask = np.repeat(interior[:, None], 3, axis=1)
        return glob, mask

    def _rhs_rows(self, kernel, Vloc, cols, t):
        di, lo, up = self._coef
        v0 = kernel.gather(Vloc, 0)
        vm = kernel.gather(Vloc, 1)
        vp = kernel.gather(Vloc, 2)
        return kernel.mask[:, :1] * (di * v0 + lo * vm + up * vp)

    def _jac_rows(self, kernel, Vloc, cols, t):
        di, lo, up = self._coef
        vals = np.empty((1,) + kernel.pattern_glob.shape)
        vals[0, :, 0] = di
        vals[0, :, 1] = lo
        vals[0, :, 2] = up
        return vals

    def params(self):
        return {"name": self.name, "n": self.n, "s": self.s, "d": self.d,
                "alpha": self.alpha, "velocity": self.velocity,
                "seed": self.seed}


class Burgers1D(ProblemInstance):
    """Viscous Burgers on [0, 1] with a random KL initial perturbation.

    The KL modes are the leading eigenpairs of the squared-exponential
    kernel ``exp(-(x - x')^2 / l_c^2)`` with ``l_c = 0.1`` on the grid;
    this choice is recorded in run metadata.
    """

    name = "burgers1d"

    def __init__(self, n=512, s=32, d=4, nu=0.01, sigma_x=0.001, l_c=0.1, seed=0):
        self.nu = float(nu)
        self.sigma_x = float(sigma_x)
        self.l_c = float(l_c)
        super().__init__(n, s, d, seed)
        self.x = np.linspace(0.0, 1.0, self.n)
        self.dx = self.x[1] - self.x[0]
        self._kl = None

    def _sample_parameters(self):
        return _columnwise_standard_normal(self._rngs, self.d)

    def _kl_modes(self):
        """Leading ``d`` scaled KL modes ``sqrt(lambda_i) psi_i`` (n x d)."""
        if self._kl is not None:
            return self._kl
        Kmat = np.exp(-((self.x[:, None] - self.x[None, :]) / self.l_c) ** 2)
        if self.n <= 1024:
            w, V = np.linalg.eigh(Kmat)
            w, V = w[::-1][: self.d], V[:, ::-1][:, : self.d]
        else:
            w, V = spla.eigsh(Kmat, k=self.d, which="LA")
            order = np.argsort(w)[::-1]
            w, V = w[order], V[:, order]
        for j in range(self.d):  # deterministic mode signs
            lead = np.argmax(np.abs(V[:, j]))
            if V[lead, j] < 0:
                V[:, j] = -V[:, j]
        self._kl = V * np.sqrt(np.maximum(w, 0.0))
        return self._kl

    def initial_condition(self):
        base = 0.5 * np.sin(2 * np.pi * self.x) * (np.exp(np.cos(2 * np.pi * self.x)) - 1.5)
        V0 = base[:, None] + self.sigma_x * self._kl_modes() @ self.xi.T
        V0[0, :] = 0.0
        V0[-1, :] = 0.0
        return V0

    def _jac_pattern(self, rows):
        glob = np.stack([rows, np.clip(rows - 1, 0, self.n - 1),
                         np.clip(rows + 1, 0, self.n - 1)], axis=1)
        interior = ((rows > 0) & (rows < self.n - 1)).astype(float)
        mask = np.repeat(interior[:, None], 3, axis=1)
        return glob, mask

    def _rhs_rows(self, kernel, Vloc, cols, t):
        v0 = kernel.gather(Vloc, 0)
        vm = kernel.gather(Vloc, 1)
        vp = kernel.gather(Vloc, 2)
        adv = -v0 * (vp - vm) / (2.0 * self.dx)
        dif = self.nu * (vp - 2.0 * v0 + vm) / self.dx**2
        return kernel.mask[:, :1] * (adv + dif)

    def _jac_rows(self, kernel, Vloc, cols, t):
        v0 = kernel.gather(Vloc, 0)
        vm = kernel.gather(Vloc, 1)
        vp = kernel.gather(Vloc, 2)
        h, h2 = 2.0 * self.dx, self.dx**2
        m = Vloc.shape[1]
        vals = np.empty((m, kernel.pattern_glob.shape[0], 3))
        vals[:, :, 0] = (-(vp - vm) / h - 2.0 * self.nu / h2).T
        vals[:, :, 1] = (v0 / h + self.nu / h2).T
        vals[:, :, 2] = (-v0 / h + self.nu / h2).T
        return vals

    def params(self):
        return {"name": self.name, "n": self.n, "s": self.s, "d": self.d,
                "nu": self.nu, "sigma_x": self.sigma_x, "l_c": self.l_c,
                "kl_kernel": "squared_exponential", "seed": self.seed}


class GrayScott2D(ProblemInstance):
    """Gray-Scott reaction-diffusion on a periodic [-1, 1]^2 grid.

    State layout: the u field occupies rows 0..N-1 and the v field rows
    N..2N-1 with N = Nx * Ny; within a field, index ``iy * Nx + ix``.
    The reaction coefficient ``beta = beta0 (1 + sigma xi)`` varies per
    sample with ``xi ~ U(0, 1)``; diffusion constants are shared.
    """

    name = "grayscott2d"

    def __init__(self, Nx=100, Ny=100, s=32, eps1=2e-5, eps2=1e-5, alpha=0.04,
                 beta0=0.1, sigma=1e-4, seed=0):
        self.Nx, self.Ny = int(Nx), int(Ny)
        self.N = self.Nx * self.Ny
        self.eps1, self.eps2 = float(eps1), float(eps2)
        self.alpha, self.beta0, self.sigma = float(alpha), float(beta0), float(sigma)
        super().__init__(2 * self.N, s, 1, seed)
        self.dx = 2.0 / self.Nx
        self.dy = 2.0 / self.Ny
        ix, iy = np.meshgrid(np.arange(self.Nx), np.arange(self.Ny))
        self.X = -1.0 + ix.ravel() * self.dx
        self.Y = -1.0 + iy.ravel() * self.dy
        self.beta = self.beta0 * (1.0 + self.sigma * self.xi[:, 0])
        self._neighbors = self._build_neighbors()

    def _sample_parameters(self):
        return np.vstack([rng.uniform(0.0, 1.0, 1) for rng in self._rngs])

    def _build_neighbors(self):
        k = np.arange(self.N)
        ix, iy = k % self.Nx, k // self.Nx
        left = iy * self.Nx + (ix - 1) % self.Nx
        right = iy * self.Nx + (ix + 1) % self.Nx
        down = ((iy - 1) % self.Ny) * self.Nx + ix
        up = ((iy + 1) % self.Ny) * self.Nx + ix
        return np.stack([left, right, down, up], axis=1)

    def initial_condition(self):
        u0 = 1.0 - np.exp(-80.0 * ((self.X + 0.05) ** 2 + (self.Y + 0.02) ** 2))
        v0 = np.exp(-80.0 * ((self.X - 0.05) ** 2 + (self.Y - 0.02) ** 2))
        col = np.concatenate([u0, v0])
        return np.repeat(col[:, None], self.s, axis=1)

    def _jac_pattern(self, rows):
        field = rows // self.N  # 0 = u, 1 = v
        k = rows % self.N
        nb = self._neighbors[k] + (field * self.N)[:, None]
        cross = (1 - field) * self.N + k
        glob = np.concatenate([rows[:, None], nb, cross[:, None]], axis=1)
        mask = np.ones_like(glob, dtype=float)
        return glob, mask

    def _split(self, kernel, Vloc):
        """Per-row values: self, 4 Laplacian neighbors summed, cross partner."""
        v0 = kernel.gather(Vloc, 0)
        nb = sum(kernel.gather(Vloc, j) for j in range(1, 5))
        vx = kernel.gather(Vloc, 5)
        return v0, nb, vx

    def _rhs_rows(self, kernel, Vloc, cols, t):
        field = kernel.p // self.N
        v0, nb, vx = self._split(kernel, Vloc)
        lap = (nb - 4.0 * v0) / self.dx**2
        beta = self.beta[np.asarray(cols)]
        is_u = (field == 0)[:, None]
        # u rows: v0 = u, vx = v;  v rows: v0 = v, vx = u
        f_u = self.eps1 * lap + self.alpha * (1.0 - v0) - v0 * vx**2
        f_v = self.eps2 * lap - beta[None, :] * v0 + vx * v0**2
        return np.where(is_u, f_u, f_v)

    def _jac_rows(self, kernel, Vloc, cols, t):
        field = kernel.p // self.N
        v0, _, vx = self._split(kernel, Vloc)
        beta = self.beta[np.asarray(cols)]
        m = Vloc.shape[1]
        npts = kernel.p.shape[0]
        is_u = (field == 0)[None, :]
        eps = np.where(is_u, self.eps1, self.eps2)
        vals = np.empty((m, npts, 6))
        diag_u = -4.0 * self.eps1 / self.dx**2 - self.alpha - vx.T**2
        diag_v = -4.0 * self.eps2 / self.dx**2 - beta[:, None] + 2.0 * vx.T * v0.T
        vals[:, :, 0] = np.where(is_u, diag_u, diag_v)
        vals[:, :, 1:5] = (eps / self.dx**2)[:, :, None]
        cross_u = -2.0 * v0.T * vx.T  # d(-u v^2)/dv
        cross_v = v0.T**2             # d(+u v^2)/du, v0 = v here
        vals[:, :, 5] = np.where(is_u, cross_u, cross_v)
        return vals

    def params(self):
        return {"name": self.name, "Nx": self.Nx, "Ny": self.Ny, "s": self.s,
                "eps1": self.eps1, "eps2": self.eps2, "alpha": self.alpha,
                "beta0": self.beta0, "sigma": self.sigma, "seed": self.seed}


MODEL_NAMES = ("advdiff1d", "burgers1d", "grayscott2d")


def make_model(config):
    """Build a ProblemInstance from a model config block."""
    cfg = dict(config)
    name = cfg.pop("name", None)
    try:
        if name == "advdiff1d":
            return AdvectionDiffusion1D(**cfg)
        if name == "burgers1d":
            return Burgers1D(**cfg)
        if name == "grayscott2d":
            return GrayScott2D(**cfg)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for model {name!r}: {exc}") from exc
    raise ConfigError(f"unknown model {name!r}; choose from {MODEL_NAMES}")
