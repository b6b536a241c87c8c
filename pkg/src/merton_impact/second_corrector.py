"""Leading-order utility loss u(t, w) = lambda w^b gbar(t), with b = 3 m m* - R.

``gbar`` solves the linear terminal-value problem

    gbar' + k(t) gbar = -g(t),   gbar(T) = 0,
    k(t) = -b g(t)^{-1/R} + b r + (b/R + b(b-1)/(2R^2)) Q,

with ``Q`` the squared Sharpe ratio, and so has the explicit form
``gbar(t) = int_t^T g(s) exp(int_t^s k) ds``. The same ``u`` is the
expected integral of the first corrector source ``a = lambda g w^b`` along
frictionless optimal wealth paths, which gives a Monte Carlo cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import quad, solve_ivp

from .merton import MertonSolution, int_g_pow_inv
from .rng import brownian_increments


class QuadratureError(RuntimeError):
    pass


def beta_exponent(m: float, R: float) -> float:
    m_star = 1.0 / (3.0 * m - 2.0)
    b = 3.0 * m * m_star - R
    if not math.isclose(b, 1.0 + 2.0 * m_star - R, rel_tol=0.0, abs_tol=1e-14):
        raise AssertionError("exponent identity 3 m m* = 1 + 2 m* failed")
    return b


def _k_parts(merton: MertonSolution, b: float) -> tuple[float, float]:
    """k(t) = -b g^{-1/R}(t) + k_const; returns (b, k_const)."""
    R = merton.inv.R
    Q = merton.market.sharpe_sq()
    return b, b * merton.market.r + (b / R + b * (b - 1.0) / (2.0 * R * R)) * Q


def bar_g_closed_form(t, merton: MertonSolution, inv=None, beta: float | None = None,
                      epsrel: float = 1e-12, limit: int = 200):
    """Explicit integral representation of gbar, evaluated by adaptive quadrature.

    The inner integral of ``g^{-1/R}`` is exact. ``beta`` overrides the
    exponent ``b`` (used to test degenerate cases).
    """
    inv = inv or merton.inv
    T, nu = inv.T, merton.nu
    b = beta_exponent(inv.m, inv.R) if beta is None else beta
    _, k_const = _k_parts(merton, b)

    def one(t0: float) -> float:
        if t0 >= T:
            return 0.0

        def integrand(s):
            return merton.g_fn(s) * math.exp(k_const * (s - t0) - b * int_g_pow_inv(t0, s, nu, T))

        val, err = quad(integrand, t0, T, epsabs=1e-14, epsrel=epsrel, limit=limit)
        if not np.isfinite(val) or err > 1e-9 * max(1.0, abs(val)):
            raise QuadratureError(f"outer quadrature did not converge at t={t0} (err {err:.2e})")
        return val

    t_arr = np.asarray(t, dtype=np.float64)
    out = np.array([one(float(x)) for x in t_arr.ravel()]).reshape(t_arr.shape)
    return float(out) if out.ndim == 0 else out


def _k_fn(merton: MertonSolution, b: float):
    _, k_const = _k_parts(merton, b)

    def k(t):
        return -b * merton.c_ratio(t) + k_const

    return k


def bar_g_ode(grid, merton: MertonSolution, inv=None, beta: float | None = None,
              ode_tol: float = 1e-10):
    """Backward integration of the gbar equation from gbar(T) = 0.

    Returns ``(grid, values, solution)`` where ``solution`` is the dense
    interpolant of the integrator.
    """
    inv = inv or merton.inv
    b = beta_exponent(inv.m, inv.R) if beta is None else beta
    k = _k_fn(merton, b)
    grid = np.asarray(grid, dtype=np.float64)
    sol = solve_ivp(lambda t, y: [-merton.g_fn(t) - k(t) * y[0]], (inv.T, float(grid.min())), [0.0],
                    method="DOP853", rtol=ode_tol, atol=ode_tol * 1e-2, dense_output=True)
    if not sol.success:
        raise RuntimeError(f"gbar integration failed: {sol.message}")
    vals = sol.sol(grid)[0]
    vals[grid >= inv.T] = 0.0
    return grid, vals, sol.sol


def bar_g_ode_residual(merton: MertonSolution, sol, points, beta: float | None = None,
                       h: float = 1e-5) -> float:
    """Largest |gbar' + k gbar + g| at the points, derivative by central differences."""
    inv = merton.inv
    b = beta_exponent(inv.m, inv.R) if beta is None else beta
    k = _k_fn(merton, b)
    p = np.asarray(points, dtype=np.float64)
    deriv = (sol(p + h)[0] - sol(p - h)[0]) / (2.0 * h)
    return float(np.max(np.abs(deriv + k(p) * sol(p)[0] + merton.g_fn(p))))


@dataclass(frozen=True)
class SecondCorrector:
    merton: MertonSolution
    lam: float
    beta_exp: float
    t_grid: NDArray[np.float64] = field(repr=False)
    bar_g_grid: NDArray[np.float64] = field(repr=False)
    bar_g_ode_grid: NDArray[np.float64] = field(repr=False)

    def bar_g(self, t):
        return bar_g_closed_form(t, self.merton, beta=self.beta_exp)

    def max_form_gap(self) -> float:
        return float(np.max(np.abs(self.bar_g_grid - self.bar_g_ode_grid)))


def build_second_corrector(merton: MertonSolution, lam: float, n_grid: int = 1001) -> SecondCorrector:
    b = beta_exponent(merton.inv.m, merton.inv.R)
    grid = np.linspace(0.0, merton.inv.T, n_grid)
    closed = bar_g_closed_form(grid, merton, beta=b)
    _, ode_vals, _ = bar_g_ode(grid, merton, beta=b)
    return SecondCorrector(merton, float(lam), b, grid, closed, ode_vals)


def _check_wealth(w):
    if np.any(np.asarray(w) <= 0.0):
        raise ValueError("wealth must be positive")


def u_value(t, w, sc: SecondCorrector):
    _check_wealth(w)
    return sc.lam * np.asarray(w, dtype=np.float64) ** sc.beta_exp * sc.bar_g(t)


def a_source(t, w, g_fn, lam: float, beta_exp: float):
    _check_wealth(w)
    return lam * g_fn(t) * np.asarray(w, dtype=np.float64) ** beta_exp


def frictionless_wealth_paths(merton: MertonSolution, t0: float, w0: float, n_steps: int,
                              seed: int, paths) -> tuple[NDArray, NDArray]:
    """Exact log-normal sampling of optimal frictionless wealth on a uniform grid.

    Returns ``(t_grid, W)`` with ``W`` of shape (n_paths, n_steps + 1).
    """
    market, inv = merton.market, merton.inv
    grid = np.linspace(t0, inv.T, n_steps + 1)
    dt = (inv.T - t0) / n_steps
    vol = market.sigma.T @ merton.pi
    drift = market.r + merton.pi @ market.excess - 0.5 * vol @ vol
    cons = int_g_pow_inv(grid[:-1], grid[1:], merton.nu, inv.T)
    dB = brownian_increments(seed, paths, n_steps, market.d, dt)
    log_inc = drift * dt - cons + dB @ vol
    logW = np.concatenate([np.zeros((log_inc.shape[0], 1)), np.cumsum(log_inc, axis=1)], axis=1)
    return grid, w0 * np.exp(logW)


@dataclass(frozen=True)
class FeynmanKacResult:
    mc_estimate: float
    std_err: float
    analytic: float
    n_paths: int

    @property
    def z_score(self) -> float:
        if self.std_err == 0.0:
            return 0.0 if self.mc_estimate == self.analytic else math.inf
        return abs(self.mc_estimate - self.analytic) / self.std_err


def feynman_kac_check(t: float, w: float, n_paths: int, seed: int, sc: SecondCorrector,
                      n_steps: int = 200, batch: int = 10_000) -> FeynmanKacResult:
    """Monte Carlo of E[int_t^T a(r, W0_r) dr] against u(t, w).

    The time integral along each path uses Simpson's rule on the sampling
    grid (``n_steps`` is rounded up to an even number).
    """
    merton = sc.merton
    analytic = float(u_value(t, w, sc))
    if t >= merton.inv.T:
        return FeynmanKacResult(0.0, 0.0, analytic, n_paths)
    n_steps += n_steps % 2
    vals = np.empty(n_paths)
    for start in range(0, n_paths, batch):
        idx = np.arange(start, min(start + batch, n_paths))
        grid, W = frictionless_wealth_paths(merton, t, w, n_steps, seed, idx)
        a = a_source(grid, W, merton.g_fn, sc.lam, sc.beta_exp)
        h = grid[1] - grid[0]
        vals[idx] = h / 3.0 * (a[:, 0] + a[:, -1] + 4.0 * a[:, 1:-1:2].sum(axis=1)
                               + 2.0 * a[:, 2:-1:2].sum(axis=1))
    return FeynmanKacResult(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths)),
                            analytic, n_paths)
