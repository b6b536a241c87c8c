"""Multidimensional corrector built from the 1D solution by separation of variables.

In the rescaled displacement ``x = S (xi * s) / w^{1+m*}`` (``S`` the symmetric
square root of ``sigma sigma^T``) the corrector is

    W(x) = sum_j beta_j w1(gamma_j x_j),

and it solves

    R/2 |x|^2 - (1/m) sum_j kappa^{1-m} |W_{x_j}|^m
        + Tr(W_xx D) / (2 R^2) = lambda,

where ``D = (Sigma S)^T (Sigma S)`` and column ``i`` of ``Sigma`` is
``pi_i R S (pi - e_i)``. The full corrector in the original variables is
``g(t) w^{1-R+4m*} W(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .corrector1d import Corrector1D
from .merton import InvestorImpactParams, MarketParams, validate_simplex


class NotSPDError(ValueError):
    pass


class NonPositiveDiagonalError(ValueError):
    pass


def matrix_sqrt_spd(A, sym_tol: float = 1e-12) -> NDArray[np.float64]:
    """Symmetric positive definite square root by spectral decomposition."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if A.shape[0] != A.shape[1]:
        raise NotSPDError("matrix must be square")
    if np.max(np.abs(A - A.T)) > sym_tol * max(1.0, np.max(np.abs(A))):
        raise NotSPDError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
    if vals.min() <= 0.0:
        raise NotSPDError(f"smallest eigenvalue {vals.min():.3e} is not positive")
    B = (vecs * np.sqrt(vals)) @ vecs.T
    return 0.5 * (B + B.T)


@dataclass(frozen=True)
class CorrectorMD:
    S_half: NDArray[np.float64]
    S_half_inv: NDArray[np.float64]
    Sigma: NDArray[np.float64]
    diagSS: NDArray[np.float64]
    gamma: NDArray[np.float64]
    beta: NDArray[np.float64]
    lam: float
    c1d: Corrector1D
    R: float
    kappa: float
    m: float

    @property
    def d(self) -> int:
        return self.gamma.size

    @property
    def m_star(self) -> float:
        return 1.0 / (3.0 * self.m - 2.0)

    @property
    def SS(self) -> NDArray[np.float64]:
        M = self.Sigma @ self.S_half
        return M.T @ M

    def box_halfwidth(self) -> float:
        """Half-width of the cube of x values that stays on the tabulated 1D grid."""
        return self.c1d.x_max / float(self.gamma.max())


def build_factorization(market: MarketParams, inv: InvestorImpactParams, pi,
                        c1d: Corrector1D) -> CorrectorMD:
    pi = np.atleast_1d(np.asarray(pi, dtype=np.float64))
    if not validate_simplex(pi):
        raise ValueError(f"Merton fractions {pi} are not inside the simplex")
    if not np.isclose(c1d.m, inv.m):
        raise ValueError(f"1D corrector solved for m={c1d.m}, investor has m={inv.m}")
    R, kappa, m = inv.R, inv.kappa, inv.m
    ms = inv.m_star
    S = matrix_sqrt_spd(market.cov)
    d = pi.size
    Sigma = np.column_stack([pi[i] * R * S @ (pi - np.eye(d)[i]) for i in range(d)])
    M = Sigma @ S
    diag = np.einsum("ij,ij->j", M, M)
    if np.any(diag <= 0.0):
        raise NonPositiveDiagonalError(f"diagonal of (Sigma S)^T (Sigma S) is {diag}")
    gamma = (2.0 * (m / (kappa * (m - 1.0))) ** (m - 1.0) * R ** (3.0 * m - 1.0) / diag**m) ** ms
    beta = (2.0 ** (-4.0 * ms) * diag ** (4.0 * m * ms - 1.0) * R ** (-1.0 - 4.0 * ms)
            * (kappa * (m - 1.0) / m) ** (4.0 * (m - 1.0) * ms))
    lam = c1d.lambda_m * float(np.sum(R / (2.0 * gamma**2)))
    return CorrectorMD(S, np.linalg.inv(S), Sigma, diag, gamma, beta, lam, c1d, R, kappa, m)


def varpi_tilde(cmd: CorrectorMD, x):
    x = np.asarray(x, dtype=np.float64)
    return np.sum(cmd.beta * cmd.c1d.w(cmd.gamma * x), axis=-1)


def varpi_tilde_grad(cmd: CorrectorMD, x):
    x = np.asarray(x, dtype=np.float64)
    return cmd.beta * cmd.gamma * cmd.c1d.dw(cmd.gamma * x)


def varpi_tilde_hess_diag(cmd: CorrectorMD, x):
    # the Hessian is diagonal: no cross terms in a separable sum
    x = np.asarray(x, dtype=np.float64)
    return cmd.beta * cmd.gamma**2 * cmd.c1d.d2w(cmd.gamma * x)


def _check_state(w, s):
    if np.any(np.asarray(w) <= 0.0):
        raise ValueError("wealth must be positive")
    if np.any(np.asarray(s) <= 0.0):
        raise ValueError("prices must be positive")


def rescaled_x(cmd: CorrectorMD, w, s, xi):
    """x = S (xi * s) / w^{1+m*}; broadcasts over leading axes."""
    w = np.asarray(w, dtype=np.float64)
    y = np.asarray(xi, dtype=np.float64) * np.asarray(s, dtype=np.float64)
    return (y @ cmd.S_half.T) / w[..., None] ** (1.0 + cmd.m_star)


def varpi_full(cmd: CorrectorMD, g_fn: Callable, t, w, s, xi):
    _check_state(w, s)
    x = rescaled_x(cmd, w, s, xi)
    return g_fn(t) * np.asarray(w) ** (1.0 - cmd.R + 4.0 * cmd.m_star) * varpi_tilde(cmd, x)


def varpi_full_grad(cmd: CorrectorMD, g_fn: Callable, t, w, s, xi):
    """Gradient in xi: g w^{3m*-R} s * (S grad W(x))."""
    _check_state(w, s)
    x = rescaled_x(cmd, w, s, xi)
    scale = g_fn(t) * np.asarray(w, dtype=np.float64) ** (3.0 * cmd.m_star - cmd.R)
    return np.asarray(scale)[..., None] * np.asarray(s) * (varpi_tilde_grad(cmd, x) @ cmd.S_half.T)


def varpi_full_hess(cmd: CorrectorMD, g_fn: Callable, t, w, s, xi):
    """Hessian in xi: g w^{2m*-1-R} diag(s) S H S diag(s), H = diag(W_xx)."""
    _check_state(w, s)
    x = rescaled_x(cmd, w, s, xi)
    s = np.asarray(s, dtype=np.float64)
    H = varpi_tilde_hess_diag(cmd, x)
    inner = np.einsum("ij,...j,jk->...ik", cmd.S_half, H, cmd.S_half)
    scale = g_fn(t) * np.asarray(w, dtype=np.float64) ** (2.0 * cmd.m_star - 1.0 - cmd.R)
    return np.asarray(scale)[..., None, None] * s[..., :, None] * inner * s[..., None, :]


def ch0_matrix(pi, market: MarketParams, inv: InvestorImpactParams, t, w, s) -> NDArray[np.float64]:
    """Quadratic-variation matrix of the frictionless share holdings."""
    del t  # constant coefficients
    pi = np.atleast_1d(np.asarray(pi, dtype=np.float64))
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    cov = market.cov
    if np.linalg.cond(cov) > 1e10:
        raise ValueError("covariance matrix is numerically singular")
    V = market.excess[:, None] - inv.R * cov  # column i: mu - r1 - R cov e_i
    core = V.T @ np.linalg.solve(cov, V)
    ps = pi / s
    return w * w / inv.R**2 * np.outer(ps, ps) * core


def first_corrector_lhs(cmd: CorrectorMD, x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    grad = varpi_tilde_grad(cmd, x)
    hess = varpi_tilde_hess_diag(cmd, x)
    R, m = cmd.R, cmd.m
    return (0.5 * R * np.sum(x * x, axis=-1)
            - cmd.kappa ** (1.0 - m) / m * np.sum(np.abs(grad) ** m, axis=-1)
            + np.sum(hess * cmd.diagSS, axis=-1) / (2.0 * R * R))


def first_corrector_residual(cmd: CorrectorMD, inv: InvestorImpactParams | None, x_samples) -> float:
    """Largest |LHS - lambda| of the rescaled corrector equation over the samples."""
    del inv  # constants are already folded into cmd
    return float(np.max(np.abs(first_corrector_lhs(cmd, x_samples) - cmd.lam)))


def a_source(cmd: CorrectorMD, g_fn: Callable, t, w):
    """Right-hand side of the unscaled first corrector equation, lambda g w^{1+2m*-R}."""
    return cmd.lam * g_fn(t) * np.asarray(w, dtype=np.float64) ** (3.0 * cmd.m * cmd.m_star - cmd.R)


def full_corrector_lhs(cmd: CorrectorMD, merton, inv: InvestorImpactParams, t, w, s, xi):
    g_fn = merton.g_fn
    market = merton.market
    s = np.asarray(s, dtype=np.float64)
    xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
    R, m = inv.R, inv.m
    gt = g_fn(t)
    V_w = gt * w ** (-R)
    V_ww = -R * gt * w ** (-R - 1.0)
    y = xi * s
    vol = y @ market.sigma  # sum_j y_j sigma^j
    grad = varpi_full_grad(cmd, g_fn, t, w, s, xi)
    z = (grad / s) @ cmd.S_half_inv.T
    hess = varpi_full_hess(cmd, g_fn, t, w, s, xi)
    c = ch0_matrix(merton.pi, market, inv, t, w, s)
    return (-0.5 * V_ww * np.sum(vol * vol, axis=-1)
            - V_w ** (1.0 - m) / m * inv.kappa ** (1.0 - m) * np.sum(np.abs(z) ** m, axis=-1)
            + 0.5 * np.einsum("ij,...ji->...", c, hess))


def full_corrector_residual(cmd: CorrectorMD, merton, inv: InvestorImpactParams, t, w, s,
                            xi_samples, relative: bool = True) -> float:
    """Largest residual of the unscaled first corrector equation at (t, w, s).

    Relative to ``a(t, w)`` by default.
    """
    _check_state(w, s)
    a = a_source(cmd, merton.g_fn, t, w)
    res = np.abs(full_corrector_lhs(cmd, merton, inv, t, w, s, xi_samples) - a)
    return float(np.max(res / abs(a) if relative else res))
