import numpy as np
import pytest

from psaddle import system as sy
from psaddle import uzawa as uz
from psaddle.errors import NotConvergedError, PsaddleError


class TestPlanInnerCount:
    def test_heat_case_l84(self):
        # direct evaluation of the defining inequality over increasing L
        bundle = sy.derive_constants(3.0, 1.0)
        C_3, L = uz.plan_inner_count(bundle, 0.9995)
        cA, cS = bundle.A_constants, bundle.S_constants
        target = (0.9995 - cS.sigma) / cS.theta_star
        assert abs(C_3 - (target + 1.0) / 0.9995) < 1e-12
        assert cA.sigma**L * (C_3 + 1.0) <= target
        assert cA.sigma ** (L - 1) * (C_3 + 1.0) > target
        assert L == 84

    def test_zero_inner_contraction(self):
        # m_A = L_A: sigma_A = 0, a single inner step always suffices
        bundle = sy.derive_constants(2.0, 2.0)
        _, L = uz.plan_inner_count(bundle, 0.99)
        assert L == 1

    def test_sigma_hat_out_of_range(self):
        bundle = sy.derive_constants(3.0, 1.0)
        with pytest.raises(PsaddleError):
            uz.plan_inner_count(bundle, bundle.S_constants.sigma)
        with pytest.raises(PsaddleError):
            uz.plan_inner_count(bundle, 1.0)

    def test_config_validation(self):
        bundle = sy.derive_constants(3.0, 1.0)
        cfg = uz.make_config(bundle)
        assert cfg.sigma_S < cfg.sigma_hat_S < 1.0
        with pytest.raises(PsaddleError):
            uz.UzawaConfig(
                sigma_hat_S=0.5, C_3=1.0, L=1, theta_star_A=0.1, theta_star_S=0.1,
                sigma_A=0.9, sigma_S=0.99,
            )


class TestRunInexactUzawa:
    def test_zero_data_zero_start(self, heat8):
        rhs0 = (np.zeros(heat8.pair.dim_Y), np.zeros(heat8.pair.dim_X))
        cfg = uz.make_config(heat8.bundle, tol=1e-14, max_outer=10)
        state, trace = uz.run_inexact_uzawa(
            rhs0, heat8.pair, heat8.op_Y, heat8.op_X, heat8.ctx, cfg
        )
        assert trace.converged and len(trace.k) == 1
        assert trace.eta[0] == 0.0
        assert np.all(state.lam == 0.0) and np.all(state.u == 0.0)

    @pytest.mark.parametrize("setup_name", ["heat8", "quasi8"])
    def test_apriori_envelope(self, setup_name, request):
        # both error components stay below the R-linear envelope at every
        # outer iteration, with the theoretical inner count
        s = request.getfixturevalue(setup_name)
        cfg = uz.make_config(s.bundle, tol=0.0, max_outer=12)
        state, trace = uz.run_inexact_uzawa(
            s.rhs, s.pair, s.op_Y, s.op_X, s.ctx, cfg, reference=s.reference
        )
        C3 = cfg.C_3
        C4 = max(
            s.ctx.norm_Y(s.reference.lam) / C3, s.ctx.norm_X_delta(s.reference.u)
        )
        for i, k in enumerate(trace.k):
            assert trace.err_lambda[i] / C3 <= cfg.sigma_hat_S ** (k + 1) * C4 + 1e-9
            assert trace.err_u[i] <= cfg.sigma_hat_S**k * C4 + 1e-9

    def test_cost_bookkeeping(self, heat8):
        cfg = uz.make_config(heat8.bundle, tol=0.0, max_outer=5, L_practical=7)
        _, trace = uz.run_inexact_uzawa(
            heat8.rhs, heat8.pair, heat8.op_Y, heat8.op_X, heat8.ctx, cfg
        )
        assert trace.inner_count == [7] * 5
        assert trace.napply == [7 + 2] * 5
        assert trace.riesz_X_solves == [1] * 5

    def test_stops_on_eta(self, heat8):
        cfg = uz.make_config(heat8.bundle, tol=1e-2, max_outer=5000, L_practical=6)
        state, trace = uz.run_inexact_uzawa(
            heat8.rhs, heat8.pair, heat8.op_Y, heat8.op_X, heat8.ctx, cfg
        )
        assert trace.converged
        assert trace.eta[-1] <= 1e-2
        # the returned state is the monitored pair, consistent with eta
        eta, _, _ = uz.aposteriori_estimate(
            state, heat8.rhs, heat8.pair, heat8.op_Y, heat8.op_X, heat8.ctx
        )
        assert abs(eta - trace.eta[-1]) <= 1e-12

    def test_unconverged_flagged(self, heat8):
        cfg = uz.make_config(heat8.bundle, tol=1e-12, max_outer=3, L_practical=2)
        state, trace = uz.run_inexact_uzawa(
            heat8.rhs, heat8.pair, heat8.op_Y, heat8.op_X, heat8.ctx, cfg
        )
        assert not trace.converged and len(trace.k) == 3
        with pytest.raises(NotConvergedError):
            uz.run_inexact_uzawa(
                heat8.rhs, heat8.pair, heat8.op_Y, heat8.op_X, heat8.ctx, cfg,
                raise_on_cap=True,
            )

    def test_eta_eventually_decreasing(self, heat8):
        cfg = uz.make_config(heat8.bundle, tol=0.0, max_outer=60, L_practical=6)
        _, trace = uz.run_inexact_uzawa(
            heat8.rhs, heat8.pair, heat8.op_Y, heat8.op_X, heat8.ctx, cfg
        )
        tail = trace.eta[10:]
        assert all(tail[i + 1] <= tail[i] * (1 + 1e-9) for i in range(len(tail) - 1))


class TestAposteriori:
    def test_zero_everything(self, heat8):
        rhs0 = (np.zeros(heat8.pair.dim_Y), np.zeros(heat8.pair.dim_X))
        state = sy.SaddleState(np.zeros(heat8.pair.dim_Y), np.zeros(heat8.pair.dim_X))
        eta, rY, rX = uz.aposteriori_estimate(
            state, rhs0, heat8.pair, heat8.op_Y, heat8.op_X, heat8.ctx
        )
        assert eta == 0.0

    @pytest.mark.parametrize("setup_name", ["heat8", "quasi8"])
    def test_exact_solution_floor(self, setup_name, request):
        s = request.getfixturevalue(setup_name)
        eta, _, _ = uz.aposteriori_estimate(
            s.reference, s.rhs, s.pair, s.op_Y, s.op_X, s.ctx
        )
        assert eta <= 1e-10

    @pytest.mark.parametrize("setup_name", ["heat8", "quasi8"])
    def test_two_sided_band(self, setup_name, request, rng):
        s = request.getfixturevalue(setup_name)
        lo = 1.0 / s.bundle.L_N - 1e-9
        hi = s.bundle.L_Ninv + 1e-9
        for _ in range(25):
            scale = 10.0 ** rng.uniform(-3, 0)
            dlam = scale * rng.standard_normal(s.pair.dim_Y)
            du = scale * rng.standard_normal(s.pair.dim_X)
            state = sy.SaddleState(s.reference.lam + dlam, s.reference.u + du)
            eta, _, _ = uz.aposteriori_estimate(
                state, s.rhs, s.pair, s.op_Y, s.op_X, s.ctx
            )
            true = s.ctx.norm_Y(dlam) + s.ctx.norm_X_delta(du)
            assert lo <= true / eta <= hi


class TestPreconditionedRiesz:
    def test_preconditioned_run_converges(self, heat8):
        # replace the exact trial Riesz solve by the wavelet-in-time
        # preconditioner with spectrally adapted constants
        from psaddle import precond as pc
        from psaddle.core_linalg import spectral_bounds

        basis = pc.build_time_wavelets(heat8.pair.mesh_t_X)
        prec = pc.make_precond(basis, heat8.pair)
        lo, hi = spectral_bounds(heat8.ctx.apply_R_X, prec.apply, heat8.pair.dim_X)
        assert 0 < lo <= hi
        adapted = uz.adapted_schur_constants(heat8.bundle, lo, hi)
        assert adapted.sigma < 1.0
        cfg = uz.make_config(
            heat8.bundle, tol=0.0, max_outer=300, L_practical=6, S_constants=adapted
        )
        state, trace = uz.run_inexact_uzawa(
            heat8.rhs, heat8.pair, heat8.op_Y, heat8.op_X, heat8.ctx, cfg,
            reference=heat8.reference, apply_Rinv_X=prec.apply,
        )
        # adapted constants are pessimistic: verify steady linear decay
        assert trace.err_u[-1] < 0.9 * trace.err_u[0]
        tail = trace.err_u[50:]
        assert all(tail[i + 1] <= tail[i] * (1 + 1e-12) for i in range(len(tail) - 1))

    def test_adapted_constants_validation(self, heat8):
        with pytest.raises(Exception):
            uz.adapted_schur_constants(heat8.bundle, 0.0, 1.0)
