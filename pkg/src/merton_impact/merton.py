"""Frictionless Merton consumption/investment problem in a Black-Scholes market.

With constant drift ``mu``, volatility matrix ``sigma`` (row ``j`` drives asset
``j``) and interest rate ``r``, a CRRA investor with risk aversion ``R`` holds
the constant fractions

    pi = (sigma sigma^T)^{-1} (mu - r 1) / R

and the value function is ``g(t) U(w)`` with

    g(t) = ((1 + (nu - 1) exp(-nu (T - t))) / nu)^R.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray

COND_LIMIT = 1e10
NU_TOL = 1e-12


class SingularCovarianceError(ValueError):
    pass


class DegenerateNuError(ValueError):
    pass


class InadmissibleMertonError(ValueError):
    """Merton fractions fall outside the open simplex."""


def _as_vector(x) -> NDArray[np.float64]:
    return np.atleast_1d(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class MarketParams:
    mu: NDArray[np.float64]
    sigma: NDArray[np.float64]
    r: float

    def __post_init__(self):
        mu = _as_vector(self.mu)
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        if sigma.shape != (mu.size, mu.size):
            raise ValueError(f"sigma must be {mu.size}x{mu.size}, got {sigma.shape}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "r", float(self.r))
        if np.linalg.eigvalsh(self.cov).min() <= 0.0:
            raise SingularCovarianceError("sigma sigma^T is not positive definite")

    @property
    def d(self) -> int:
        return self.mu.size

    @property
    def cov(self) -> NDArray[np.float64]:
        return self.sigma @ self.sigma.T

    @property
    def excess(self) -> NDArray[np.float64]:
        return self.mu - self.r

    def sharpe_sq(self) -> float:
        """Squared market Sharpe ratio (mu - r1)^T (sigma sigma^T)^{-1} (mu - r1)."""
        ex = self.excess
        return float(ex @ np.linalg.solve(self.cov, ex))


@dataclass(frozen=True)
class InvestorImpactParams:
    R: float
    T: float
    kappa: float
    m: float

    def __post_init__(self):
        if not 0.0 < self.R < 1.0:
            raise ValueError(f"risk aversion must lie in (0, 1), got {self.R}")
        if self.T <= 0.0:
            raise ValueError("horizon T must be positive")
        if self.kappa <= 0.0:
            raise ValueError("impact scale kappa must be positive")
        if self.m <= 2.0:
            raise ValueError(f"impact exponent m must exceed 2, got {self.m}")

    @property
    def m_star(self) -> float:
        return 1.0 / (3.0 * self.m - 2.0)

    @property
    def alpha(self) -> float:
        return 1.0 / (self.m - 1.0)


def merton_fraction(market: MarketParams, inv: InvestorImpactParams) -> NDArray[np.float64]:
    cov = market.cov
    if np.linalg.cond(cov) > COND_LIMIT:
        raise SingularCovarianceError("covariance matrix is numerically singular")
    return np.linalg.solve(cov, market.excess) / inv.R


def validate_simplex(pi) -> bool:
    pi = _as_vector(pi)
    return bool(np.all(pi > 0.0) and pi.sum() < 1.0)


def pi_star(pi) -> float:
    """Distance of the Merton weights to the boundary of the simplex."""
    pi = _as_vector(pi)
    return float(min(pi.min(), 1.0 - pi.sum()))


def nu_constant(market: MarketParams, inv: InvestorImpactParams, pi=None) -> float:
    if pi is not None and not validate_simplex(pi):
        raise InadmissibleMertonError(f"Merton fractions {pi} are not inside the simplex")
    R = inv.R
    nu = (R - 1.0) * (market.r / R + market.sharpe_sq() / (2.0 * R * R))
    if abs(nu) <= NU_TOL:
        raise DegenerateNuError(f"nu = {nu:.3e} is degenerate")
    return float(nu)


def g(t, nu: float, R: float, T: float):
    """Time factor of the frictionless value function; g(T) = 1."""
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = (1.0 + (nu - 1.0) * np.exp(-nu * (T - t))) / nu
    if not np.all(inner > 0.0):
        raise ValueError("g is undefined: inner expression is not positive")
    out = inner**R
    return float(out) if out.ndim == 0 else out


def g_pow_inv(t, nu: float, R: float, T: float):
    """g(t)^{-1/R}, the consumption-to-wealth ratio."""
    t = np.asarray(t, dtype=np.float64)
    out = nu / (1.0 + (nu - 1.0) * np.exp(-nu * (T - t)))
    return float(out) if out.ndim == 0 else out


def int_g_pow_inv(t0, t1, nu: float, T: float):
    """Exact integral of g^{-1/R} over [t0, t1].

    Uses the antiderivative -log|exp(nu (T - u)) + nu - 1|; the argument has
    the sign of nu wherever g is defined, so it never crosses zero.
    """
    def G(u):
        return -np.log(np.abs(np.exp(nu * (T - np.asarray(u, dtype=np.float64))) + nu - 1.0))

    return G(t1) - G(t0)


def utility(c, R: float):
    c = np.asarray(c, dtype=np.float64)
    out = np.maximum(c, 0.0) ** (1.0 - R) / (1.0 - R)
    return float(out) if out.ndim == 0 else out


def _check_positive(name: str, x) -> None:
    if np.any(np.asarray(x) <= 0.0):
        raise ValueError(f"{name} must be positive")


def frictionless_value(t, w, g_fn: Callable, R: float):
    _check_positive("wealth", w)
    return g_fn(t) * utility(w, R)


def optimal_consumption_rate(t, w, g_fn: Callable, R: float):
    _check_positive("wealth", w)
    return g_fn(t) ** (-1.0 / R) * np.asarray(w, dtype=np.float64)


def h0_shares(t, w, s, pi) -> NDArray[np.float64]:
    # t is carried for signature symmetry: pi is constant in this market
    _check_positive("wealth", w)
    s = _as_vector(s)
    _check_positive("price", s)
    return _as_vector(pi) * w / s


@dataclass(frozen=True)
class MertonSolution:
    market: MarketParams
    inv: InvestorImpactParams
    pi: NDArray[np.float64]
    nu: float
    t_grid: NDArray[np.float64] = field(repr=False)
    g_grid: NDArray[np.float64] = field(repr=False)

    def g_fn(self, t):
        return g(t, self.nu, self.inv.R, self.inv.T)

    def c_ratio(self, t):
        return g_pow_inv(t, self.nu, self.inv.R, self.inv.T)

    def value(self, t, w):
        return frictionless_value(t, w, self.g_fn, self.inv.R)

    def consumption(self, t, w):
        return optimal_consumption_rate(t, w, self.g_fn, self.inv.R)

    @property
    def pi_star(self) -> float:
        return pi_star(self.pi)


def solve_merton(market: MarketParams, inv: InvestorImpactParams, n_grid: int = 1001) -> MertonSolution:
    """Closed-form frictionless solution, with g tabulated on a uniform grid."""
    pi = merton_fraction(market, inv)
    if not validate_simplex(pi):
        raise InadmissibleMertonError(f"Merton fractions {pi} are not inside the simplex")
    nu = nu_constant(market, inv, pi)
    t_grid = np.linspace(0.0, inv.T, n_grid)
    return MertonSolution(market, inv, pi, nu, t_grid, g(t_grid, nu, inv.R, inv.T))
