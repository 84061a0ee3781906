"""Minimal ProblemInstance implementations used across the test modules."""

import numpy as np

from tdbcur.models import ProblemInstance


class ScalarDecay(ProblemInstance):
    """dv/dt = lam * v applied entrywise; every row is independent.

    A linear model with a diagonal operator, handy for closed-form
    scheme checks (the exact solution is ``exp(lam t) v0``).
    """

    is_linear = True
    name = "scalar_decay"

    def __init__(self, n=3, s=2, lam=-1.0, seed=0):
        self.lam = float(lam)
        super().__init__(n, s, d=1, seed=seed)

    def _sample_parameters(self):
        return np.zeros((self.s, 1))

    def _jac_pattern(self, rows):
        glob = rows[:, None].copy()
        mask = np.ones((rows.size, 1))
        return glob, mask

    def _rhs_rows(self, kernel, Vloc, cols, t):
        return self.lam * kernel.gather(Vloc, 0) * kernel.mask[:, :1]

    def _jac_rows(self, kernel, Vloc, cols, t):
        m = Vloc.shape[1]
        vals = np.full((m,) + kernel.pattern_glob.shape, self.lam)
        return vals

    def initial_condition(self):
        rng = np.random.default_rng(self.seed)
        return rng.standard_normal((self.n, self.s))

    def linear_operator(self):
        import scipy.sparse as sp
        return sp.identity(self.n, format="csr") * self.lam

    def params(self):
        return {"name": self.name, "n": self.n, "s": self.s, "lam": self.lam}


class ZeroRhs(ScalarDecay):
    """dv/dt = 0: the state is a fixed point of every integrator."""

    name = "zero_rhs"

    def __init__(self, n=4, s=3, seed=0):
        super().__init__(n=n, s=s, lam=0.0, seed=seed)
