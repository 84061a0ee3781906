import numpy as np
import pytest

from tdbcur.errors import ConfigError, InputError
from tdbcur.factorization import TruncationRule, truncated_svd
from tdbcur.fom import (FomIntegrator, exact_linear_solution, relative_error)
from tdbcur.integrator import (TdbCurIntegrator, build_correction_basis,
                               integrate, select_columns)
from tdbcur.models import AdvectionDiffusion1D, Burgers1D

from toy_models import ScalarDecay


class TestSelectColumns:
    def test_matches_deim_at_basis_width(self):
        rng = np.random.default_rng(0)
        Y, _ = np.linalg.qr(rng.standard_normal((12, 4)))
        from tdbcur.sampling import deim
        assert np.array_equal(select_columns(Y, 4), deim(Y))

    def test_rank_growth_adds_one_index(self):
        rng = np.random.default_rng(1)
        Y, _ = np.linalg.qr(rng.standard_normal((12, 4)))
        out = select_columns(Y, 5)
        assert out.size == 5
        assert len(np.unique(out)) == 5

    def test_range_checks(self):
        Y = np.eye(6)[:, :3]
        with pytest.raises(InputError):
            select_columns(Y, 0)
        with pytest.raises(InputError):
            select_columns(Y, 5)  # can grow by at most one
        with pytest.raises(InputError):
            select_columns(np.eye(3), 4)  # exceeds row count


class TestCorrectionBasis:
    def test_orthonormal_and_spanning(self):
        rng = np.random.default_rng(2)
        B1 = rng.standard_normal((20, 3))
        B2 = rng.standard_normal((20, 2))
        basis = build_correction_basis([B1, B2])
        U = basis.U
        assert np.allclose(U.T @ U, np.eye(basis.r_delta), atol=1e-12)
        # every block column lies in the span
        M = np.hstack([B1, B2])
        assert np.linalg.norm(M - U @ (U.T @ M)) < 1e-10 * np.linalg.norm(M)

    def test_redundant_blocks_deduplicated(self):
        rng = np.random.default_rng(3)
        B = rng.standard_normal((15, 3))
        basis = build_correction_basis([B, B, 2.0 * B])
        assert basis.r_delta == 3


class TestFullRankDegeneracy:
    @pytest.mark.parametrize("scheme", ["am2", "dirk2", "bdf2"])
    def test_matches_full_order_when_rank_saturates(self, scheme):
        """At r = s = n the low-rank step reduces to the full-order step."""
        m = ScalarDecay(n=8, s=8, lam=-1.0, seed=3)
        fom = FomIntegrator(m, scheme=scheme, dt=0.1)
        tdb = TdbCurIntegrator(m, scheme=scheme, dt=0.1, rank=8, eps_t=1e-15,
                               max_row_iter=8)
        for _ in range(3):
            fom.step()
            tdb.step()
            assert relative_error(fom.V, tdb.state.reconstruct()) < 1e-11


class TestLinearModelAccuracy:
    def test_close_to_exact_solution(self):
        m = AdvectionDiffusion1D(n=101, s=8, d=8)
        integ = TdbCurIntegrator(m, scheme="dirk3", dt=0.05, rank=6, e=10)
        integ.run(1.0)
        exact = exact_linear_solution(m, m.initial_condition(), 1.0)
        assert relative_error(exact, integ.state.reconstruct()) < 1e-5

    def test_reports_accumulate(self):
        m = AdvectionDiffusion1D(n=51, s=6, d=6)
        integ = TdbCurIntegrator(m, scheme="dirk2", dt=0.1, rank=4, e=4)
        integ.run(0.5)
        assert len(integ.reports) == 5
        ts = [rep.t for rep in integ.reports]
        assert np.allclose(ts, 0.1 * np.arange(1, 6))
        for rep in integ.reports:
            assert rep.rank == 4
            assert rep.row_iterations >= 1
            assert rep.indices.p.size == rep.r_delta + integ.e

    def test_row_iterations_capped(self):
        m = AdvectionDiffusion1D(n=51, s=6, d=6)
        integ = TdbCurIntegrator(m, scheme="dirk2", dt=0.1, rank=4, e=0,
                                 eps_t=0.0, max_row_iter=6)
        integ.step()
        assert integ.reports[0].row_iterations == 6

    def test_collocation_row_update_converges(self):
        """With eps_t = 0 the per-iteration update norm hits roundoff."""
        m = Burgers1D(n=128, s=8, d=4)
        integ = TdbCurIntegrator(m, scheme="am2", dt=0.01, rank=5, e=0,
                                 eps_t=0.0, max_row_iter=6)
        integ.step()
        res = integ.reports[0].row_residuals
        assert res[-1] < 1e-12
        assert res[-1] < res[0]


class TestResidualTracing:
    def test_residuals_recorded_and_decreasing(self):
        m = Burgers1D(n=128, s=8, d=4)
        integ = TdbCurIntegrator(m, scheme="am2", dt=0.01, rank=5, e=0,
                                 eps_t=0.0, max_row_iter=6,
                                 trace_residuals=True)
        integ.step()
        rep = integ.reports[0]
        assert len(rep.collocation_residuals) == rep.row_iterations
        assert len(rep.full_residuals) == rep.row_iterations
        # collocation residual drops by many orders; the full residual
        # stalls at the low-rank representation floor
        assert rep.collocation_residuals[-1] < 1e-3 * rep.collocation_residuals[0]
        assert rep.full_residuals[-1] <= rep.full_residuals[0]


class TestLeastSquaresOracle:
    def test_oracle_matches_dense_newton_for_linear_model(self):
        """For a linear model in a complete basis the one-sweep regression
        solve coincides with the full-order implicit step."""
        m = ScalarDecay(n=6, s=4, lam=-0.8, seed=1)
        integ = TdbCurIntegrator(m, scheme="am2", dt=0.1, rank=4)
        from tdbcur.schemes import scheme_table
        spec = scheme_table("am2")
        V_prev = integ.state.reconstruct()
        basis = build_correction_basis([np.eye(6)])
        V_new = integ.solve_rows_least_squares_oracle(basis, None, spec,
                                                      [V_prev])
        fom = FomIntegrator(m, scheme="am2", dt=0.1, V0=V_prev)
        fom.step()
        assert relative_error(fom.V, V_new) < 1e-12

    def test_oracle_rejects_dirk(self):
        m = ScalarDecay(n=4, s=2)
        integ = TdbCurIntegrator(m, scheme="dirk2", dt=0.1, rank=2)
        from tdbcur.schemes import scheme_table
        with pytest.raises(InputError):
            integ.solve_rows_least_squares_oracle(
                build_correction_basis([np.eye(4)]), None,
                scheme_table("dirk2"), [integ.state.reconstruct()])


class TestRankAdaptivity:
    def test_rank_grows_under_loose_start(self):
        """Starting deliberately under-resolved, the threshold pair raises
        the rank until the tail proxy falls inside the band."""
        m = AdvectionDiffusion1D(n=101, s=12, d=12)
        V0 = m.initial_condition()
        U, sg, Y = truncated_svd(V0, TruncationRule(mode="fixed_rank", rank=2))
        V0_lr = (U * sg) @ Y.T
        integ = TdbCurIntegrator(m, scheme="dirk2", dt=0.05, rank=None,
                                 thresholds=(1e-9, 1e-8), e=6, V0=V0_lr)
        integ.run(1.0)
        trace = integ.rank_trace()
        assert trace[-1] > 2
        assert all(b - a in (-1, 0, 1) for a, b in zip(trace, trace[1:]))

    def test_rank_change_recorded(self):
        m = AdvectionDiffusion1D(n=101, s=12, d=12)
        integ = TdbCurIntegrator(m, scheme="dirk2", dt=0.05, rank=None,
                                 thresholds=(1e-9, 1e-8), e=6)
        integ.run(0.5)
        for rep in integ.reports:
            assert rep.rank_change in (-1, 0, 1)

    def test_threshold_validation(self):
        m = ScalarDecay()
        with pytest.raises(ConfigError):
            TdbCurIntegrator(m, rank=None, thresholds=(1e-8, 1e-9))
        with pytest.raises(ConfigError):
            TdbCurIntegrator(m, rank=None, thresholds=None)


class TestConfigValidation:
    def test_model_type_checked(self):
        with pytest.raises(ConfigError):
            TdbCurIntegrator(np.eye(3), rank=2)

    def test_dt_and_e_checked(self):
        m = ScalarDecay()
        with pytest.raises(ConfigError):
            TdbCurIntegrator(m, dt=0.0, rank=2)
        with pytest.raises(ConfigError):
            TdbCurIntegrator(m, dt=0.1, rank=2, e=-1)

    def test_run_step_multiple_checked(self):
        m = ScalarDecay()
        integ = TdbCurIntegrator(m, dt=0.3, rank=2)
        with pytest.raises(ConfigError):
            integ.run(1.0)


class TestIntegrateDriver:
    def test_warmup_then_low_rank(self):
        m = Burgers1D(n=128, s=8, d=4)
        integ = integrate(m, "am2", 0.01, 0.2, rank=5, e=5, warmup_T=0.1)
        assert abs(integ.t - 0.2) < 1e-12
        assert len(integ.reports) == 10

    def test_observer_sees_every_step(self):
        m = AdvectionDiffusion1D(n=51, s=6, d=6)
        seen = []
        integrate(m, "dirk2", 0.1, 0.3, rank=3, e=3,
                  observer=lambda rep, st: seen.append(rep.t))
        assert np.allclose(seen, [0.1, 0.2, 0.3])
