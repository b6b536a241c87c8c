"""Power-law price impact and its convex dual.

With ``y = S (theta * s)`` and ``alpha = 1/(m-1)``, trading at rate ``theta``
shifts prices by

    f_j(s, theta) = kappa (m-1)/m * s_j (S y^(alpha))_j

and costs ``theta . f = kappa (m-1)/m * sum_j |y_j|^{m/(m-1)}`` per unit time.
The convex conjugate of this cost is

    Phi(s, x) = 1/(m kappa^{m-1}) * sum_j |(S^{-1}(x/s))_j|^m.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray


def signed_power(x, a: float):
    """sign(x)|x|^a, with 0 at x = 0."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    with np.errstate(divide="ignore"):
        mag = np.where(ax > 0.0, np.exp(a * np.log(np.where(ax > 0.0, ax, 1.0))), 0.0)
    return np.sign(x) * mag


def _check_prices(s):
    if np.any(np.asarray(s) <= 0.0):
        raise ValueError("prices must be positive")


@dataclass(frozen=True)
class ImpactModel:
    kappa: float
    m: float
    S_half: NDArray[np.float64]
    S_half_inv: NDArray[np.float64]

    def __post_init__(self):
        if self.kappa <= 0.0:
            raise ValueError("kappa must be positive")
        if self.m <= 2.0:
            raise ValueError("m must exceed 2")

    @classmethod
    def from_corrector(cls, cmd) -> "ImpactModel":
        return cls(cmd.kappa, cmd.m, cmd.S_half, cmd.S_half_inv)

    @property
    def alpha(self) -> float:
        return 1.0 / (self.m - 1.0)

    def _y(self, s, theta):
        return (np.asarray(theta, dtype=np.float64) * s) @ self.S_half.T

    def impact_price_shift(self, s, theta):
        _check_prices(s)
        s = np.asarray(s, dtype=np.float64)
        y = self._y(s, theta)
        k = self.kappa * (self.m - 1.0) / self.m
        return k * s * (signed_power(y, self.alpha) @ self.S_half.T)

    def execution_cost(self, s, theta):
        _check_prices(s)
        y = self._y(np.asarray(s, dtype=np.float64), theta)
        k = self.kappa * (self.m - 1.0) / self.m
        return k * np.sum(np.abs(y) ** (self.m / (self.m - 1.0)), axis=-1)

    def _z(self, s, x):
        return (np.asarray(x, dtype=np.float64) / s) @ self.S_half_inv.T

    def phi(self, s, x):
        _check_prices(s)
        z = self._z(np.asarray(s, dtype=np.float64), x)
        return np.sum(np.abs(z) ** self.m, axis=-1) / (self.m * self.kappa ** (self.m - 1.0))

    def phi_grad(self, s, x):
        _check_prices(s)
        s = np.asarray(s, dtype=np.float64)
        z = self._z(s, x)
        return (signed_power(z, self.m - 1.0) @ self.S_half_inv) / (s * self.kappa ** (self.m - 1.0))


def conjugate_closed_form(model: ImpactModel, s, x) -> float:
    """sup_theta {x.theta - cost(theta)} solved coordinatewise in y = S(theta*s).

    In ``y`` the objective separates as ``sum_j z_j y_j - c|y_j|^p`` with
    ``z = S^{-1}(x/s)``, ``p = m/(m-1)`` and ``c = kappa/p``; each scalar
    maximizer is ``y_j = sign(z_j)(|z_j|/kappa)^{m-1}``.
    """
    s = np.asarray(s, dtype=np.float64)
    z = (np.asarray(x, dtype=np.float64) / s) @ model.S_half_inv.T
    y = signed_power(z / model.kappa, model.m - 1.0)
    theta = (y @ model.S_half_inv.T) / s
    return float(np.dot(x, theta) - model.execution_cost(s, theta))


def conjugate_search(model: ImpactModel, s, x, n_grid: int = 41, n_zoom: int = 60) -> float:
    """Zooming grid search for sup_theta {x.theta - cost(theta)}.

    Uses only ``execution_cost``: a tensor grid around the current best point
    is shrunk by a constant factor each round. Works for any dimension but is
    meant for d <= 3.
    """
    s = np.asarray(s, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    d = x.size

    def objective(th):
        return th @ x - model.execution_cost(s, th)

    # the maximizer has |theta| bounded by a multiple of |x|^{m-1}: start wide
    scale = max(1.0, 10.0 * float(np.max(np.abs(model.phi_grad(s, np.abs(x) + 1e-300)))))
    center = np.zeros(d)
    best = objective(center[None])[0]
    axes = np.linspace(-1.0, 1.0, n_grid)
    for _ in range(n_zoom):
        mesh = np.stack(np.meshgrid(*([axes] * d), indexing="ij"), axis=-1).reshape(-1, d)
        pts = center + scale * mesh
        vals = objective(pts)
        k = int(np.argmax(vals))
        if vals[k] >= best:
            best, center = vals[k], pts[k]
        scale *= 0.7
    return float(best)


def fenchel_young_gap(model: ImpactModel, s, x, theta):
    """Phi(s,x) + cost(s,theta) - x.theta (nonnegative, zero at theta = grad Phi)."""
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    return model.phi(s, x) + model.execution_cost(s, theta) - np.sum(x * theta, axis=-1)
