import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import BENCH_BETA, BENCH_GAMMA, BENCH_LAMBDA
from merton_impact.corrector_md import (NotSPDError, a_source, build_factorization, ch0_matrix,
                                        first_corrector_lhs, first_corrector_residual,
                                        full_corrector_residual, matrix_sqrt_spd, varpi_full,
                                        varpi_full_grad, varpi_full_hess, varpi_tilde,
                                        varpi_tilde_grad, varpi_tilde_hess_diag)
from merton_impact.merton import InvestorImpactParams, MarketParams, solve_merton


class TestMatrixSqrt:
    def test_identity(self):
        np.testing.assert_allclose(matrix_sqrt_spd(np.eye(3)), np.eye(3), atol=1e-15)

    def test_diagonal(self):
        np.testing.assert_allclose(matrix_sqrt_spd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)

    @given(arrays(np.float64, (3, 3), elements=st.floats(-1.0, 1.0)))
    def test_reconstruction(self, M):
        A = M @ M.T + 0.1 * np.eye(3)
        B = matrix_sqrt_spd(A)
        np.testing.assert_allclose(B @ B, A, atol=1e-12)
        np.testing.assert_array_equal(B, B.T)

    def test_rejects_indefinite(self):
        with pytest.raises(NotSPDError):
            matrix_sqrt_spd(np.diag([1.0, -1.0]))

    def test_rejects_asymmetric(self):
        with pytest.raises(NotSPDError):
            matrix_sqrt_spd(np.array([[1.0, 0.5], [0.0, 1.0]]))


class TestFactorization:
    def test_sqrt_of_cov(self, cmd, market):
        np.testing.assert_allclose(cmd.S_half @ cmd.S_half, market.cov, atol=1e-14)

    def test_benchmark_constants(self, cmd, c3):
        np.testing.assert_allclose(cmd.gamma, BENCH_GAMMA, rtol=1e-12)
        np.testing.assert_allclose(cmd.beta, BENCH_BETA, rtol=1e-12)
        assert cmd.lam == pytest.approx(BENCH_LAMBDA * c3.lambda_m / 1.771133197324, rel=1e-12)

    def test_lambda_sum(self, cmd):
        assert cmd.lam == c_sum(cmd)

    def test_positive(self, cmd):
        assert np.all(cmd.diagSS > 0) and np.all(cmd.gamma > 0) and np.all(cmd.beta > 0)

    @pytest.mark.parametrize("c", [0.5, 3.0])
    def test_kappa_scaling(self, market, investor, merton, c3, cmd, c):
        inv2 = dataclasses.replace(investor, kappa=investor.kappa * c)
        cmd2 = build_factorization(market, inv2, merton.pi, c3)
        ms, m = investor.m_star, investor.m
        np.testing.assert_allclose(cmd2.gamma, cmd.gamma * c ** (-(m - 1) * ms), rtol=1e-13)
        np.testing.assert_allclose(cmd2.beta, cmd.beta * c ** (4 * (m - 1) * ms), rtol=1e-13)

    def test_rejects_outside_simplex(self, market, investor, c3):
        with pytest.raises(ValueError):
            build_factorization(market, investor, np.array([0.7, 0.6]), c3)

    def test_rejects_mismatched_m(self, market, merton, c3):
        with pytest.raises(ValueError):
            build_factorization(market, InvestorImpactParams(0.5, 1.0, 1.0, 4.0), merton.pi, c3)


def c_sum(cmd):
    return cmd.c1d.lambda_m * float(np.sum(cmd.R / (2.0 * cmd.gamma**2)))


class TestRescaledCorrector:
    def test_origin(self, cmd):
        assert varpi_tilde(cmd, np.zeros(2)) == 0.0
        np.testing.assert_array_equal(varpi_tilde_grad(cmd, np.zeros(2)), 0.0)

    @given(arrays(np.float64, 2, elements=st.floats(-0.5, 0.5)))
    def test_even(self, cmd, x):
        assert varpi_tilde(cmd, -x) == varpi_tilde(cmd, x)

    def test_gradient_finite_differences(self, cmd):
        rng = np.random.default_rng(3)
        X = rng.uniform(-0.3, 0.3, (100, 2))
        h = 1e-6
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            fd = (varpi_tilde(cmd, X + e) - varpi_tilde(cmd, X - e)) / (2 * h)
            np.testing.assert_allclose(varpi_tilde_grad(cmd, X)[:, j], fd, rtol=1e-5, atol=1e-12)

    def test_hessian_finite_differences(self, cmd):
        rng = np.random.default_rng(4)
        X = rng.uniform(-0.3, 0.3, (50, 2))
        h = 1e-6
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            fd = (varpi_tilde_grad(cmd, X + e)[:, j] - varpi_tilde_grad(cmd, X - e)[:, j]) / (2 * h)
            np.testing.assert_allclose(varpi_tilde_hess_diag(cmd, X)[:, j], fd, rtol=1e-5, atol=1e-10)


class TestFullCorrector:
    def test_zero_displacement(self, cmd, merton):
        assert varpi_full(cmd, merton.g_fn, 0.2, 1.3, np.array([1.0, 2.0]), np.zeros(2)) == 0.0

    @given(arrays(np.float64, 2, elements=st.floats(-1.0, 1.0)).filter(lambda v: np.any(np.abs(v) > 1e-3)))
    def test_positive(self, cmd, merton, xi):
        assert varpi_full(cmd, merton.g_fn, 0.2, 1.3, np.array([1.0, 2.0]), xi) > 0.0

    def test_target_displacement(self, cmd, merton):
        # holding no shares: xi * s is proportional to the target weights
        w, s, eps = 1.7, np.array([1.2, 0.8]), 0.1
        xi = -(merton.pi * w / s) / eps ** cmd.m_star
        y = xi * s
        np.testing.assert_allclose(y / y.sum(), merton.pi / merton.pi.sum(), rtol=1e-14)

    def test_gradient_and_hessian(self, cmd, merton):
        rng = np.random.default_rng(5)
        t, w, s = 0.3, 1.4, np.array([0.9, 1.1])
        h = 1e-7
        for _ in range(10):
            xi = rng.normal(0, 0.01, 2)
            grad = varpi_full_grad(cmd, merton.g_fn, t, w, s, xi)
            hess = varpi_full_hess(cmd, merton.g_fn, t, w, s, xi)
            for j in range(2):
                e = np.zeros(2)
                e[j] = h
                fd = (varpi_full(cmd, merton.g_fn, t, w, s, xi + e)
                      - varpi_full(cmd, merton.g_fn, t, w, s, xi - e)) / (2 * h)
                assert grad[j] == pytest.approx(fd, rel=1e-5, abs=1e-12)
                fdg = (varpi_full_grad(cmd, merton.g_fn, t, w, s, xi + e)
                       - varpi_full_grad(cmd, merton.g_fn, t, w, s, xi - e)) / (2 * h)
                np.testing.assert_allclose(hess[:, j], fdg, rtol=1e-5, atol=1e-9)

    def test_rejects_bad_state(self, cmd, merton):
        with pytest.raises(ValueError):
            varpi_full(cmd, merton.g_fn, 0.0, -1.0, np.ones(2), np.zeros(2))


class TestCh0:
    def test_symmetric_and_scaling(self, merton, market, investor):
        c = ch0_matrix(merton.pi, market, investor, 0.0, 1.0, np.array([1.0, 2.0]))
        np.testing.assert_allclose(c, c.T, rtol=1e-14)
        c2 = ch0_matrix(merton.pi, market, investor, 0.0, 2.0, np.array([1.0, 2.0]))
        np.testing.assert_allclose(c2, 4 * c, rtol=1e-14)

    def test_vanishing_factor(self, investor):
        sigma = np.array([[0.3, 0.0], [0.09, 0.28]])
        cov = sigma @ sigma.T
        r = 0.02
        mu = r + investor.R * cov[:, 0]
        mk = MarketParams(mu, sigma, r)
        pi = np.array([0.3, 0.2])
        c = ch0_matrix(pi, mk, investor, 0.0, 1.0, np.ones(2))
        np.testing.assert_allclose(c[0], 0.0, atol=1e-16)
        np.testing.assert_allclose(c[:, 0], 0.0, atol=1e-16)


class TestResiduals:
    def test_origin(self, cmd, investor):
        lhs = first_corrector_lhs(cmd, np.zeros((1, 2)))[0]
        trace = np.sum(varpi_tilde_hess_diag(cmd, np.zeros(2)) * cmd.diagSS) / (2 * cmd.R**2)
        assert lhs == pytest.approx(trace, rel=1e-15)
        assert first_corrector_residual(cmd, investor, np.zeros((1, 2))) <= 1e-5

    def test_box_samples(self, cmd, investor):
        B = cmd.box_halfwidth()
        X = np.random.default_rng(6).uniform(-B, B, (1000, 2))
        assert first_corrector_residual(cmd, investor, X) <= 1e-5

    def test_perturbed_lambda_detected(self, cmd, market, investor, merton, c3):
        bad = build_factorization(market, investor, merton.pi,
                                  dataclasses.replace(c3, lambda_m=c3.lambda_m * 1.01))
        X = np.random.default_rng(7).uniform(-0.1, 0.1, (200, 2))
        good_res = first_corrector_residual(cmd, investor, X)
        bad_res = first_corrector_residual(bad, investor, X)
        # the mismatch is exactly the shift in lambda, far above the solver error
        assert bad_res == pytest.approx(0.01 * cmd.lam, rel=1e-6)
        assert bad_res > 1e4 * good_res

    def test_full_at_origin_is_source(self, cmd, merton, investor):
        t, w, s = 0.4, 1.2, np.array([1.1, 0.7])
        r = full_corrector_residual(cmd, merton, investor, t, w, s, np.zeros((1, 2)), relative=False)
        assert r <= 1e-12 * a_source(cmd, merton.g_fn, t, w) + 1e-18

    def test_full_random(self, cmd, merton, investor):
        rng = np.random.default_rng(8)
        B = cmd.box_halfwidth()
        for _ in range(20):
            t, w = rng.uniform(0, 0.99), rng.uniform(0.5, 2.0)
            s = rng.uniform(0.5, 2.0, 2)
            x = rng.uniform(-B, B, (100, 2))
            xi = (x @ cmd.S_half_inv.T) * w ** (1 + cmd.m_star) / s
            assert full_corrector_residual(cmd, merton, investor, t, w, s, xi) <= 1e-4

    def test_exponent_identity(self, cmd):
        assert 3 * cmd.m * cmd.m_star - cmd.R == pytest.approx(1 + 2 * cmd.m_star - cmd.R, abs=1e-15)


def test_one_asset_residual(c3):
    # sigma = 1, pi = 0.4, R = 0.5
    mk = MarketParams(np.array([0.22]), np.array([[1.0]]), 0.02)
    inv = InvestorImpactParams(0.5, 1.0, 1.0, 3.0)
    ms = solve_merton(mk, inv)
    assert ms.pi[0] == pytest.approx(0.4, rel=1e-14)
    cmd = build_factorization(mk, inv, ms.pi, c3)
    x = np.linspace(-cmd.box_halfwidth(), cmd.box_halfwidth(), 501)[:, None]
    assert first_corrector_residual(cmd, inv, x) <= 1e-5
    assert full_corrector_residual(cmd, ms, inv, 0.5, 1.0, np.ones(1), x[::10] * 1.0) <= 1e-4
