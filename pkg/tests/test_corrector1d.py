import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import ORACLE_LAMBDA_M
from merton_impact.corrector1d import (AsymptoteNotReachedError, BracketError, asym_coeff_dw,
                                       asym_coeff_w, bisect_lambda, build_profile, c_m,
                                       classify_shot, eval_d2w, eval_dw, eval_w, load_corrector,
                                       probe_monotone, radau_march, save_corrector, shoot_lambda,
                                       verify_second_derivative_bound)


@pytest.fixture(scope="module")
def c25():
    return shoot_lambda(2.5)


@pytest.fixture(scope="module")
def c4():
    return shoot_lambda(4.0)


class TestConstants:
    def test_m3(self):
        assert asym_coeff_dw(3.0) == pytest.approx(3.0 * 2.0 ** (-2.0 / 3.0), rel=1e-15)
        assert asym_coeff_dw(3.0) == pytest.approx(1.88988, abs=1e-5)
        assert asym_coeff_w(3.0) == pytest.approx(9.0 / (5.0 * 2.0 ** (2.0 / 3.0)), rel=1e-15)
        assert asym_coeff_w(3.0) == pytest.approx(1.13393, abs=1e-5)

    @given(st.floats(2.05, 8.0))
    def test_branch_balances_quadratic(self, m):
        # on q = A x^{2/m} the nonlinearity cancels x^2 exactly
        assert c_m(m) * asym_coeff_dw(m) ** m == pytest.approx(1.0, rel=1e-13)

    @given(st.floats(2.05, 8.0))
    def test_value_coeff_is_integral_of_slope_coeff(self, m):
        assert asym_coeff_w(m) == pytest.approx(asym_coeff_dw(m) / (1.0 + 2.0 / m), rel=1e-13)


class TestShooting:
    def test_classes_on_either_side(self):
        lam = ORACLE_LAMBDA_M[3.0]
        assert classify_shot(3.0, lam - 1e-3) == -1
        assert classify_shot(3.0, lam + 1e-3) == 1

    def test_single_switch(self):
        assert probe_monotone(3.0, 0.5, 5.0)

    def test_bracket_width(self):
        lo, hi = bisect_lambda(3.0, 0.0, 10.0, 1e-6)
        assert hi - lo <= 1e-6
        assert lo <= ORACLE_LAMBDA_M[3.0] <= hi

    def test_bracket_failure(self):
        with pytest.raises(BracketError):
            shoot_lambda(3.0, lambda_search_max=1.0)

    def test_asymptote_not_reached(self):
        with pytest.raises(AsymptoteNotReachedError):
            shoot_lambda(3.0, x_max=2.0, adapt=False)

    def test_rejects_small_m(self):
        with pytest.raises(ValueError):
            shoot_lambda(2.0)


@pytest.mark.parametrize("m", [2.5, 3.0, 4.0])
def test_lambda_matches_oracle(m, c25, c3, c4):
    c = {2.5: c25, 3.0: c3, 4.0: c4}[m]
    assert c.lambda_m == pytest.approx(ORACLE_LAMBDA_M[m], abs=1e-11)
    assert c.lambda_bracket[0] <= c.lambda_m <= c.lambda_bracket[1]


class TestProfile:
    def test_origin(self, c3):
        assert eval_w(c3, 0.0) == 0.0
        assert eval_dw(c3, 0.0) == 0.0
        assert c3.w_vals[0] == 0.0 and c3.dw_vals[0] == 0.0

    def test_curvature_at_origin_is_lambda(self, c3):
        assert eval_d2w(c3, 0.0) == pytest.approx(c3.lambda_m, rel=1e-10)

    def test_convex_and_nonnegative(self, c3):
        assert np.all(np.diff(c3.dw_vals) >= 0.0)
        assert np.all(c3.w_vals >= 0.0)

    def test_residual(self, c3):
        assert c3.max_residual() <= 1e-8

    def test_asymptotic_ratios(self, c3):
        assert c3.dw_ratio() == pytest.approx(1.88988, rel=1e-2)
        assert c3.w_ratio() == pytest.approx(1.13393, rel=2e-2)

    @given(st.floats(0.0, 5000.0))
    def test_symmetry(self, c3, x):
        assert eval_w(c3, -x) == eval_w(c3, x)
        assert eval_dw(c3, -x) == -eval_dw(c3, x)
        assert eval_d2w(c3, -x) == eval_d2w(c3, x)

    def test_continuation_beyond_grid(self, c3):
        x = 2.0 * c3.x_max
        assert eval_w(c3, x) == pytest.approx(c3.asym_coeff_w * x ** (1 + 2 / 3) + c3.c_match, rel=1e-14)
        # value continuity at the grid end
        xm = c3.x_max
        assert eval_w(c3, xm * (1 + 1e-12)) == pytest.approx(eval_w(c3, xm), rel=1e-9)

    def test_vectorized_shapes(self, c3):
        x = np.linspace(-3, 3, 12).reshape(3, 4)
        assert eval_w(c3, x).shape == (3, 4)
        np.testing.assert_array_equal(eval_dw(c3, x)[1], eval_dw(c3, x[1]))

    def test_w_is_integral_of_dw(self, c3):
        from scipy.integrate import quad
        val, _ = quad(lambda s: eval_dw(c3, s), 0.0, 7.5, epsabs=1e-13, epsrel=1e-13)
        assert eval_w(c3, 7.5) == pytest.approx(val, rel=1e-10)


class TestSecondDerivative:
    @pytest.mark.parametrize("which", ["c3", "c25"])
    def test_passes(self, which, request):
        c = request.getfixturevalue(which)
        rep = verify_second_derivative_bound(c)
        assert rep.passed and math.isfinite(rep.max_abs)

    def test_truncated_fails(self, c3):
        short = build_profile(3.0, c3.lambda_m, 5.0)
        assert not verify_second_derivative_bound(short).passed


class TestCache:
    def test_round_trip(self, c3, tmp_path):
        save_corrector(c3, tmp_path / "c3")
        back = load_corrector(tmp_path / "c3")
        assert back.lambda_m == c3.lambda_m and back.x_max == c3.x_max
        x = np.concatenate([np.linspace(0, c3.x_max, 997), [2 * c3.x_max]])
        np.testing.assert_array_equal(back.w(x), c3.w(x))
        np.testing.assert_array_equal(back.dw(x), c3.dw(x))

    def test_corrupt_table(self, c3, tmp_path):
        csv_path, _ = save_corrector(c3, tmp_path / "c3")
        lines = csv_path.read_text().splitlines()
        csv_path.write_text("\n".join(lines[:-5]) + "\n")
        with pytest.raises(ValueError):
            load_corrector(tmp_path / "c3")


class TestRadau:
    def test_fifth_order(self):
        errs = []
        for n in (8, 16):
            nodes = np.linspace(0.0, 2.0, n + 1)
            y = radau_march(lambda x, y: -y, lambda x, y: -1.0, nodes, 1.0, substeps=1)
            errs.append(abs(y[-1] - math.exp(-2.0)))
        assert errs[0] / errs[1] == pytest.approx(32.0, rel=0.1)
        assert errs[1] < 1e-8

    def test_stiff_relaxation(self):
        # y' = -k (y - cos x) - sin x has the slow solution y = cos x
        k = 1e6
        nodes = np.linspace(0.0, 1.0, 21)

        def f(x, y):
            return -k * (y - np.cos(x)) - np.sin(x)

        y = radau_march(f, lambda x, y: -k, nodes, 1.0)
        np.testing.assert_allclose(y, np.cos(nodes), atol=1e-10)

