import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from psaddle import monotone as mo
from psaddle.core_linalg import spd_factorize
from psaddle.errors import PsaddleError
from psaddle.riesz import RieszContext
from psaddle.spaces import default_pair


class TestConstants:
    def test_heat_constants(self):
        c = mo.constants_from_mu(mo.make_mu("constant", c=1.0))
        assert (c.L, c.m) == (3.0, 1.0)

    def test_one_plus_inv_constants_vs_grid_oracle(self):
        # minimize/maximize the slope of mu(r^2) r on a fine grid
        mu = mo.make_mu("one-plus-inv")
        r = np.linspace(0.0, 20.0, 400_001)
        g = (1.0 + 1.0 / (1.0 + r**2)) * r
        slopes = np.diff(g) / np.diff(r)
        assert abs(slopes.min() - mu.m_mu) < 1e-6      # 7/8, attained at r^2 = 3
        assert abs(slopes.max() - mu.M_mu) < 1e-6      # 2, attained at r = 0
        c = mo.constants_from_mu(mu)
        assert (c.L, c.m) == (6.0, 7.0 / 8.0)

    def test_bounded_ramp_constants_vs_grid_oracle(self):
        a, b = 0.5, 2.0
        mu = mo.make_mu("bounded-ramp", a=a, b=b)
        r = np.linspace(0.0, 20.0, 400_001)
        g = (a + b * r**2 / (1.0 + r**2)) * r
        slopes = np.diff(g) / np.diff(r)
        assert abs(slopes.min() - mu.m_mu) < 1e-6      # a
        assert abs(slopes.max() - mu.M_mu) < 1e-6      # a + 9b/8

    def test_theta_sigma(self):
        c = mo.MonotoneConstants(L=3.0, m=1.0)
        assert abs(c.theta_star - 1.0 / 9.0) < 1e-15
        assert abs(c.sigma - math.sqrt(8.0) / 3.0) < 1e-15

    @pytest.mark.parametrize(
        "L,m,expect",
        [((1.0), 1.0, (1.0, 1.0)), (3.0, 1.0, (1.0, 1.0 / 9.0)), (2.0, 1.0, (1.0, 0.25))],
    )
    def test_inverse_constants(self, L, m, expect):
        inv = mo.inverse_constants(mo.MonotoneConstants(L=L, m=m))
        assert (inv.L, inv.m) == expect

    @settings(max_examples=50, deadline=None)
    @given(m=st.floats(0.01, 10.0), ratio=st.floats(1.0, 50.0))
    def test_constants_invariants(self, m, ratio):
        c = mo.MonotoneConstants(L=m * ratio, m=m)
        assert 0 < c.theta_star <= 1.0 / c.m + 1e-12
        assert 0 <= c.sigma < 1

    def test_invalid_constants(self):
        with pytest.raises(PsaddleError):
            mo.MonotoneConstants(L=1.0, m=2.0)


class TestEmpiricalBounds:
    def test_constant(self):
        m_hat, M_hat = mo.empirical_mu_bounds(lambda s: np.full_like(s, 2.5), 10.0, 1000)
        assert abs(m_hat - 2.5) < 1e-9 and abs(M_hat - 2.5) < 1e-9

    def test_one_plus_inv(self):
        m_hat, M_hat = mo.empirical_mu_bounds(lambda s: 1 + 1 / (1 + s), 10.0, 100_000)
        assert abs(m_hat - 0.875) < 1e-6
        assert abs(M_hat - 2.0) < 1e-6

    def test_negative_mu_fails(self):
        with pytest.raises(PsaddleError):
            mo.empirical_mu_bounds(lambda s: np.full_like(s, -1.0), 5.0, 1000)

    def test_too_few_points(self):
        with pytest.raises(PsaddleError):
            mo.empirical_mu_bounds(lambda s: s, 5.0, 10)


class TestGalerkinOperator:
    def test_apply_zero(self, quasi8):
        assert np.all(quasi8.op_Y.apply(np.zeros(quasi8.pair.dim_Y)) == 0.0)
        assert np.all(quasi8.op_X.apply(np.zeros(quasi8.pair.dim_X)) == 0.0)

    def test_linear_reduction(self, heat8, rng):
        # mu = 1: the action equals the Kronecker matrix M_t (x) A_x
        pair = heat8.pair
        w = rng.standard_normal(pair.dim_Y)
        dense = np.kron(pair.M_t_Y.toarray(), pair.A_x.toarray()) @ w
        got = heat8.op_Y.apply(w)
        assert np.abs(got - dense).max() <= 1e-12 * np.abs(dense).max()

    @pytest.mark.parametrize("setup_name", ["heat8", "quasi8"])
    def test_discrete_lipschitz_monotone(self, setup_name, request, rng):
        # dual-norm inequalities with the constants inherited from mu
        s = request.getfixturevalue(setup_name)
        L, m = s.constants.L, s.constants.m
        for _ in range(15):
            w = rng.standard_normal(s.pair.dim_Y)
            v = rng.standard_normal(s.pair.dim_Y)
            dw = s.ctx.norm_Y(w - v)
            diff = s.op_Y.apply(w) - s.op_Y.apply(v)
            mono = diff @ (w - v)
            lip = s.ctx.dual_norm_Y(diff)
            assert mono >= m * dw**2 - 1e-10
            assert lip <= L * dw + 1e-10

    def test_jacobian_matches_finite_differences(self, quasi8, rng):
        w = rng.standard_normal(quasi8.pair.dim_Y)
        v = rng.standard_normal(quasi8.pair.dim_Y)
        eps = 1e-6
        fd = (quasi8.op_Y.apply(w + eps * v) - quasi8.op_Y.apply(w - eps * v)) / (2 * eps)
        jv = quasi8.op_Y.jacobian(w) @ v
        assert np.abs(fd - jv).max() <= 1e-7 * max(np.abs(jv).max(), 1.0)


class TestZarantonello:
    def test_riesz_map_one_step(self, rng):
        # G = R: with constants (1, 1) the first step lands on R^{-1} f
        pair = default_pair(3, 3)
        R = sp.kron(pair.M_t_Y, pair.A_x).tocsr()
        fact = spd_factorize(R)
        f = rng.standard_normal(pair.dim_Y)
        res = mo.zarantonello_solve(
            lambda x: R @ x, fact.solve, f, np.zeros(pair.dim_Y),
            mo.MonotoneConstants(L=1.0, m=1.0), tol=1e-13, max_iter=5,
        )
        assert res.converged and res.iterations <= 2
        assert np.abs(res.x - fact.solve(f)).max() < 1e-12

    def test_scalar_linear_one_step(self):
        # G(x) = 2x with (L, m) = (2, 2): sigma = 0, one-step convergence
        res = mo.zarantonello_solve(
            lambda x: 2.0 * x, lambda r: r, np.array([3.0]), np.array([0.0]),
            mo.MonotoneConstants(L=2.0, m=2.0), tol=1e-14, max_iter=5,
        )
        assert res.converged and res.iterations <= 2
        assert abs(res.x[0] - 1.5) < 1e-14

    @pytest.mark.parametrize("setup_name", ["heat8", "quasi8"])
    def test_contraction_vs_newton_reference(self, setup_name, request, rng):
        # per-step error ratio never exceeds sigma = sqrt(1 - m^2/L^2)
        s = request.getfixturevalue(setup_name)
        f = rng.standard_normal(s.pair.dim_Y) * 0.3
        ref = mo.newton_solve(
            s.op_Y.apply, s.op_Y.jacobian, f, np.zeros(s.pair.dim_Y),
            residual_norm=s.ctx.dual_norm_Y, tol=1e-13,
        )
        sigma = s.constants.sigma
        for trial in range(5):
            x = rng.standard_normal(s.pair.dim_Y)
            errs = [s.ctx.norm_Y(x - ref.x)]

            def record(it, xk, step):
                errs.append(s.ctx.norm_Y(xk - ref.x))

            mo.zarantonello_solve(
                s.op_Y.apply, s.ctx.riesz_Y_solve, f, x, s.constants,
                tol=0.0, max_iter=20, callback=record,
            )
            ratios = [errs[i + 1] / errs[i] for i in range(len(errs) - 1)]
            assert max(ratios) <= sigma * (1 + 1e-10) + 1e-12

    def test_unconverged_flag(self, heat8, rng):
        f = rng.standard_normal(heat8.pair.dim_Y)
        res = mo.zarantonello_solve(
            heat8.op_Y.apply, heat8.ctx.riesz_Y_solve, f,
            np.zeros(heat8.pair.dim_Y), heat8.constants, tol=1e-14, max_iter=3,
        )
        assert not res.converged and res.iterations == 3


class TestNewton:
    def test_quasilinear_convergence(self, quasi8, rng):
        f = rng.standard_normal(quasi8.pair.dim_Y) * 0.5
        res = mo.newton_solve(
            quasi8.op_Y.apply, quasi8.op_Y.jacobian, f,
            np.zeros(quasi8.pair.dim_Y), residual_norm=quasi8.ctx.dual_norm_Y,
            tol=1e-12,
        )
        assert res.converged
        assert quasi8.ctx.dual_norm_Y(quasi8.op_Y.apply(res.x) - f) <= 1e-12

    def test_cross_solver_agreement(self, quasi8, rng):
        # Newton and a long fixed-point run agree on the same equation
        f = rng.standard_normal(quasi8.pair.dim_Y) * 0.2
        newton = mo.newton_solve(
            quasi8.op_Y.apply, quasi8.op_Y.jacobian, f,
            np.zeros(quasi8.pair.dim_Y), residual_norm=quasi8.ctx.dual_norm_Y,
            tol=1e-13,
        )
        zar = mo.zarantonello_solve(
            quasi8.op_Y.apply, quasi8.ctx.riesz_Y_solve, f,
            np.zeros(quasi8.pair.dim_Y), quasi8.constants, tol=1e-12,
            max_iter=10_000,
        )
        assert zar.converged
        assert quasi8.ctx.norm_Y(zar.x - newton.x) <= 1e-8
