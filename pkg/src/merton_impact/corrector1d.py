"""One-dimensional ergodic corrector ODE.

Solves for the constant ``lambda_m > 0`` and the even convex function ``w`` with

    w''(x) = -x^2 + lambda_m + c_m |w'(x)|^m,    w(0) = 0,
    w'(x) / |x|^{2/m} -> +-A_m   as x -> +-inf,

where ``c_m = m^{-m} (m-1)^{m-1}`` and ``A_m = m (m-1)^{1/m-1}``.

Work is done on ``q = w'``, which obeys a first-order Riccati-type equation.
The growing branch ``q ~ A_m x^{2/m}`` is unstable when integrating forward
and stable when integrating backward, so

* ``lambda_m`` is found by forward shooting from ``q(0) = 0`` and bisecting on
  the blow-up class of the trajectory (too large: ``q`` explodes upward; too
  small: ``q`` turns negative, impossible for a convex even solution);
* the profile on ``[0, X_max]`` is then integrated backward from beyond
  ``X_max``, starting on the asymptotic branch.

Far from the origin ``q`` is stored through ``delta = q / (A_m x^{2/m}) - 1``;
the ODE right-hand side cancels catastrophically in ``q`` there.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import cumulative_trapezoid, solve_ivp, trapezoid
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

log = logging.getLogger(__name__)

X_CORE = 40.0
GRID_STEP = 0.005
FAR_RATIO = 1.002
STIFF_CAP = 1e7


class BracketError(RuntimeError):
    pass


class AsymptoteNotReachedError(RuntimeError):
    pass


def c_m(m: float) -> float:
    return m**-m * (m - 1.0) ** (m - 1.0)


def asym_coeff_dw(m: float) -> float:
    return m * (m - 1.0) ** (1.0 / m - 1.0)


def asym_coeff_w(m: float) -> float:
    return m * m / ((m + 2.0) * (m - 1.0) ** (1.0 - 1.0 / m))


def _abs_pow(q, m: float):
    # |q|^m via exp(m log|q|), exact zero at q = 0
    a = np.abs(q)
    with np.errstate(divide="ignore"):
        return np.where(a > 0.0, np.exp(m * np.log(np.where(a > 0.0, a, 1.0))), 0.0)


def riccati_rhs(x, q, lam: float, m: float):
    return -x * x + lam + c_m(m) * _abs_pow(q, m)


def _scalar_rhs(lam: float, m: float):
    cm = c_m(m)

    def f(x, q):
        return [-x * x + lam + cm * abs(q[0]) ** m]

    return f


def _delta_rhs_parts(x, delta, lam: float, m: float):
    A = asym_coeff_dw(m)
    qp = lam + x * x * np.expm1(m * np.log1p(delta))
    ddelta = qp / (A * x ** (2.0 / m)) - (2.0 / m) * (1.0 + delta) / x
    return qp, ddelta


def _delta_seed(x: float, lam: float, m: float) -> float:
    """Asymptotic-branch value of delta at large x by fixed-point iteration."""
    A = asym_coeff_dw(m)
    delta = 0.0
    for _ in range(8):
        qp = (2.0 / m) * A * x ** (2.0 / m - 1.0) * (1.0 + delta)
        delta = np.expm1(np.log1p((qp - lam) / (x * x)) / m)
    return float(delta)


# ---------------------------------------------------------------------------
# shooting for lambda_m


def classify_shot(m: float, lam: float, x_stop: float = 60.0) -> int:
    """Blow-up class of the forward shot from q(0) = 0.

    Returns +1 if q escapes above twice the asymptotic branch, -1 if q turns
    negative for x > 0, 0 if neither happened before ``x_stop``.
    """
    A = asym_coeff_dw(m)

    def high(x, q):
        return q[0] - 2.0 * A * max(x, 1e-12) ** (2.0 / m) - 1.0

    def low(x, q):
        return q[0] + 1e-3

    high.terminal = low.terminal = True
    sol = solve_ivp(
        _scalar_rhs(lam, m),
        (0.0, x_stop), [0.0], method="DOP853", rtol=1e-10, atol=1e-13,
        events=[high, low],
    )
    if sol.t_events[0].size:
        return 1
    if sol.t_events[1].size:
        return -1
    return 0


def bisect_lambda(m: float, lo: float, hi: float, bisect_tol: float = 1e-10):
    """Bisection on the shot class; returns (lo, hi) with hi - lo <= bisect_tol."""
    c_lo, c_hi = classify_shot(m, lo), classify_shot(m, hi)
    if c_lo == 0 or c_hi == 0 or c_lo == c_hi:
        raise BracketError(
            f"no blow-up bracket in [{lo}, {hi}] for m={m} (classes {c_lo}, {c_hi})"
        )
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        c = classify_shot(m, mid)
        if c == 0:
            raise BracketError(f"undecided shot at lambda={mid}")
        if c == c_lo:
            lo = mid
        else:
            hi = mid
    return lo, hi


def probe_monotone(m: float, lo: float, hi: float, n: int = 9) -> bool:
    """Shot classes on a sweep of lambda values must switch exactly once."""
    classes = [classify_shot(m, lam) for lam in np.linspace(lo, hi, n)]
    switches = sum(a != b for a, b in zip(classes, classes[1:]))
    return switches == 1 and 0 not in classes


def backward_q0(m: float, lam: float, x_start: float = 12.0) -> float:
    """q(0) of the backward trajectory started on the asymptotic branch."""
    A = asym_coeff_dw(m)
    q_start = A * x_start ** (2.0 / m) * (1.0 + _delta_seed(x_start, lam, m))
    sol = solve_ivp(_scalar_rhs(lam, m), (x_start, 0.0), [q_start],
                    method="DOP853", rtol=1e-13, atol=1e-15)
    return float(sol.y[0, -1])


def refine_lambda(m: float, lo: float, hi: float) -> float:
    """Point of the bisection bracket where the backward trajectory hits q(0) = 0.

    Falls back to the midpoint when the backward shot does not change sign
    across the bracket.
    """
    f_lo, f_hi = backward_q0(m, lo), backward_q0(m, hi)
    if f_lo * f_hi > 0.0:
        log.warning("backward shot keeps its sign on [%r, %r]; using midpoint", lo, hi)
        return 0.5 * (lo + hi)
    return float(brentq(lambda lam: backward_q0(m, lam), lo, hi, xtol=1e-16, rtol=1e-15))


# ---------------------------------------------------------------------------
# profile


def _far_stiffness(x, m: float):
    # d(delta')/d(delta) on the asymptotic branch
    return m * x ** (2.0 - 2.0 / m) / asym_coeff_dw(m)


def _grids(m: float, x_max: float, step: float, ratio: float, stiff_cap: float = STIFF_CAP):
    """Uniform core grid plus a far grid whose cells also obey h * J <= stiff_cap.

    Hermite interpolation with ODE slopes amplifies rounding in the node values
    by h * J, so the far cells shrink where the equation is stiff.
    """
    x_core = min(X_CORE, x_max)
    n_core = int(np.ceil(x_core / step))
    core = np.linspace(0.0, x_core, n_core + 1)
    if x_max <= X_CORE:
        return core, np.empty(0)
    far = [x_core]
    x = x_core
    while x < x_max:
        h = min((ratio - 1.0) * x, stiff_cap / _far_stiffness(x, m))
        x = x + h
        far.append(x)
    far = np.array(far)
    far[-1] = x_max
    if far[-1] - far[-2] < 0.25 * (far[-2] - far[-3]):
        far = np.delete(far, -2)
    return core, far


def _seed_nodes(m: float, x_max: float, ratio: float, stiff_cap: float, n: int = 20):
    """Nodes beyond x_max used only to let the backward shot settle."""
    out = [x_max]
    for _ in range(n):
        x = out[-1]
        out.append(x + min((ratio - 1.0) * x, stiff_cap / _far_stiffness(x, m)))
    return np.array(out[1:])


_S6 = np.sqrt(6.0)
_RADAU_C = np.array([(4.0 - _S6) / 10.0, (4.0 + _S6) / 10.0, 1.0])
_RADAU_A = np.array([
    [(88.0 - 7.0 * _S6) / 360.0, (296.0 - 169.0 * _S6) / 1800.0, (-2.0 + 3.0 * _S6) / 225.0],
    [(296.0 + 169.0 * _S6) / 1800.0, (88.0 + 7.0 * _S6) / 360.0, (-2.0 - 3.0 * _S6) / 225.0],
    [(16.0 - _S6) / 36.0, (16.0 + _S6) / 36.0, 1.0 / 9.0],
])


def radau_march(f, jac, nodes, y0: float, substeps: int = 2, max_newton: int = 20):
    """Scalar ODE through the given nodes with fixed-step 3-stage Radau IIA.

    Order 5 and L-stable, so steps far larger than the stiff time scale stay
    on the slow manifold. ``f`` must accept a vector of stage abscissae.
    """
    out = np.empty(len(nodes))
    out[0] = y = y0
    eye = np.eye(3)
    for k in range(1, len(nodes)):
        a = nodes[k - 1]
        h = (nodes[k] - a) / substeps
        for j in range(substeps):
            xs = a + (j + _RADAU_C) * h
            m_inv = np.linalg.inv(eye - h * jac(a + j * h, y) * _RADAU_A)
            z = np.zeros(3)
            for _ in range(max_newton):
                dz = -m_inv @ (z - h * _RADAU_A @ f(xs, y + z))
                z += dz
                if np.max(np.abs(dz)) <= 1e-15 * abs(y) + 1e-300:
                    break
            else:
                raise RuntimeError(f"Radau stage iteration stalled at x={a + j * h}")
            y = y + z[2]
        out[k] = y
    return out


def _integrate_profile(m: float, lam: float, x_max: float, step: float, ratio: float):
    core, far = _grids(m, x_max, step, ratio)
    x_core = core[-1]
    A = asym_coeff_dw(m)

    def d_rhs(x, y):
        return _delta_rhs_parts(x, y, lam, m)[1]

    def d_jac(x, y):
        dlog = m * np.exp(m * np.log1p(y)) / (1.0 + y)
        return x * x * dlog / (A * x ** (2.0 / m)) - (2.0 / m) / x

    # backward to x_core in delta form, settling on nodes past x_max first
    if far.size:
        ext = _seed_nodes(m, x_max, ratio, STIFF_CAP)
        nodes = np.concatenate([ext[::-1], far[::-1]])
    else:
        nodes = np.concatenate([_seed_nodes(m, x_core, ratio, STIFF_CAP)[::-1], [x_core]])
    vals = radau_march(d_rhs, d_jac, nodes, _delta_seed(nodes[0], lam, m))
    delta_far = vals[-far.size:][::-1] if far.size else vals[-1:]
    q_core_end = A * x_core ** (2.0 / m) * (1.0 + delta_far[0])

    sol_core = solve_ivp(
        _scalar_rhs(lam, m),
        (x_core, 0.0), [q_core_end], method="DOP853", rtol=1e-13, atol=1e-15,
        t_eval=core[::-1],
    )
    if not sol_core.success:
        raise RuntimeError(f"core integration failed: {sol_core.message}")
    q_core = sol_core.y[0][::-1].copy()
    return core, q_core, (far, delta_far if far.size else np.empty(0))


@dataclass(frozen=True)
class Corrector1D:
    m: float
    lambda_m: float
    x_grid: NDArray[np.float64] = field(repr=False)
    w_vals: NDArray[np.float64] = field(repr=False)
    dw_vals: NDArray[np.float64] = field(repr=False)
    d2w_vals: NDArray[np.float64] = field(repr=False)
    x_core: float = X_CORE
    delta_vals: NDArray[np.float64] | None = field(default=None, repr=False)
    q0_mismatch: float = 0.0
    lambda_bracket: tuple[float, float] = (np.nan, np.nan)

    def __post_init__(self):
        m, lam = self.m, self.lambda_m
        x = self.x_grid
        core = x <= self.x_core
        xc = x[core]
        q_spline = CubicHermiteSpline(xc, self.dw_vals[core], self.d2w_vals[core])
        object.__setattr__(self, "_q", q_spline)
        object.__setattr__(self, "_dq", q_spline.derivative())
        object.__setattr__(self, "_w", q_spline.antiderivative())
        if self.delta_vals is not None and np.count_nonzero(~core) > 0:
            xf = x[x >= xc[-1]]
            delta = self.delta_vals[x >= xc[-1]]
            _, ddelta = _delta_rhs_parts(xf, delta, lam, m)
            d_spline = CubicHermiteSpline(xf, delta, ddelta)
            A = asym_coeff_dw(m)
            tail = cumulative_trapezoid(A * xf ** (2.0 / m) * delta, xf, initial=0.0)
            object.__setattr__(self, "_delta", d_spline)
            object.__setattr__(self, "_ddelta", d_spline.derivative())
            object.__setattr__(self, "_far", (xf, tail, float(self._w(xc[-1]))))
        else:
            object.__setattr__(self, "_delta", None)
        w_xmax = self._w_inside(np.array([self.x_max]))[0]
        object.__setattr__(self, "c_match", float(w_xmax - self.asym_coeff_w * self.x_max ** (1.0 + 2.0 / m)))

    @property
    def x_max(self) -> float:
        return float(self.x_grid[-1])

    @property
    def asym_coeff_dw(self) -> float:
        return asym_coeff_dw(self.m)

    @property
    def asym_coeff_w(self) -> float:
        return asym_coeff_w(self.m)

    # evaluation on 0 <= a <= x_max -----------------------------------------

    def _far_mask(self, a):
        return (a > self.x_core) & (self._delta is not None)

    def _w_inside(self, a):
        out = self._w(np.minimum(a, self.x_core))
        far = self._far_mask(a)
        if np.any(far):
            xf, tail, w_core = self._far
            af = a[far]
            p = 1.0 + 2.0 / self.m
            A = self.asym_coeff_dw
            out[far] = (w_core + A / p * (af**p - self.x_core**p) + np.interp(af, xf, tail))
        return out

    def _dw_inside(self, a):
        out = self._q(np.minimum(a, self.x_core))
        far = self._far_mask(a)
        if np.any(far):
            af = a[far]
            out[far] = self.asym_coeff_dw * af ** (2.0 / self.m) * (1.0 + self._delta(af))
        return out

    def _d2w_inside(self, a):
        out = self._dq(np.minimum(a, self.x_core))
        far = self._far_mask(a)
        if np.any(far):
            af = a[far]
            m = self.m
            out[far] = self.asym_coeff_dw * af ** (2.0 / m) * (
                (2.0 / m) * (1.0 + self._delta(af)) / af + self._ddelta(af)
            )
        return out

    # public evaluation -------------------------------------------------------

    def w(self, x):
        x = np.asarray(x, dtype=np.float64)
        a = np.abs(np.atleast_1d(x))
        out = np.empty_like(a)
        inside = a <= self.x_max
        out[inside] = self._w_inside(a[inside])
        ao = a[~inside]
        out[~inside] = self.asym_coeff_w * ao ** (1.0 + 2.0 / self.m) + self.c_match
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def dw(self, x):
        x = np.asarray(x, dtype=np.float64)
        a = np.abs(np.atleast_1d(x))
        out = np.empty_like(a)
        inside = a <= self.x_max
        out[inside] = self._dw_inside(a[inside])
        out[~inside] = self.asym_coeff_dw * a[~inside] ** (2.0 / self.m)
        out *= np.sign(np.atleast_1d(x))
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def d2w(self, x):
        x = np.asarray(x, dtype=np.float64)
        a = np.abs(np.atleast_1d(x))
        out = np.empty_like(a)
        inside = a <= self.x_max
        out[inside] = self._d2w_inside(a[inside])
        m = self.m
        out[~inside] = (2.0 / m) * self.asym_coeff_dw * a[~inside] ** (2.0 / m - 1.0)
        return out.reshape(x.shape) if x.ndim else float(out[0])

    # diagnostics -------------------------------------------------------------

    def residual(self, x):
        """Pointwise ODE residual of the interpolated solution, 0 <= x <= x_max."""
        a = np.atleast_1d(np.abs(np.asarray(x, dtype=np.float64)))
        out = np.empty_like(a)
        far = self._far_mask(a) & (a <= self.x_max)
        near = ~far
        an = a[near]
        out[near] = self._d2w_inside(an) - riccati_rhs(an, self._dw_inside(an), self.lambda_m, self.m)
        if np.any(far):
            af = a[far]
            qp, _ = _delta_rhs_parts(af, self._delta(af), self.lambda_m, self.m)
            out[far] = self._d2w_inside(af) - qp
        return out

    def max_residual(self) -> float:
        """Largest |residual| over interior nodes and cell midpoints."""
        x = self.x_grid
        mids = 0.5 * (x[1:] + x[:-1])
        pts = np.concatenate([x[1:-1], mids])
        return float(np.max(np.abs(self.residual(pts))))

    def dw_ratio(self) -> float:
        return self.dw_vals[-1] / self.x_max ** (2.0 / self.m)

    def w_ratio(self) -> float:
        return self.w_vals[-1] / self.x_max ** (1.0 + 2.0 / self.m)


def eval_w(c: Corrector1D, x):
    return c.w(x)


def eval_dw(c: Corrector1D, x):
    return c.dw(x)


def eval_d2w(c: Corrector1D, x):
    return c.d2w(x)


@dataclass(frozen=True)
class SecondDerivativeReport:
    max_abs: float
    tail_max: float
    tail_ratio: float
    tail_trend: float
    passed: bool


def verify_second_derivative_bound(c: Corrector1D, tail_frac: float = 0.1,
                                   ratio_limit: float = 0.1) -> SecondDerivativeReport:
    """Bounded second derivative whose tail has decayed.

    The tail is the part of the grid beyond ``(1 - tail_frac) * X_max``; the
    check passes when its maximum is below ``ratio_limit`` times the global
    maximum. ``tail_trend`` is the log-log slope of ``w''`` over the tail.
    """
    x, d2 = c.x_grid, c.d2w_vals
    max_abs = float(np.max(np.abs(d2)))
    tail = x >= (1.0 - tail_frac) * c.x_max
    tail_max = float(np.max(np.abs(d2[tail])))
    xt, dt = x[tail], np.abs(d2[tail])
    trend = float(np.polyfit(np.log(xt), np.log(dt), 1)[0]) if xt.size > 2 and xt[0] > 0 else np.nan
    ratio = tail_max / max_abs
    return SecondDerivativeReport(max_abs, tail_max, ratio, trend,
                                  bool(np.isfinite(max_abs) and ratio < ratio_limit))


def probe_asymptotics(m: float, lam: float, x_max: float) -> tuple[float, float, float]:
    """Cheap estimate of the grid-end diagnostics for a candidate ``x_max``.

    One dense backward solve gives the relative errors of the derivative and
    value ratios at ``x_max`` and the second-derivative tail ratio; used only
    to choose ``x_max`` before the full tabulation.
    """
    A = asym_coeff_dw(m)
    cm = c_m(m)
    x0 = 1.1 * x_max
    q0 = A * x0 ** (2.0 / m) * (1.0 + _delta_seed(x0, lam, m))
    sol = solve_ivp(
        _scalar_rhs(lam, m), (x0, 0.0), [q0], method="Radau",
        rtol=1e-10, atol=1e-12, dense_output=True,
        jac=lambda x, q: [[cm * m * _abs_pow(q[0], m - 1.0) * np.sign(q[0])]],
    )
    xs = np.linspace(0.0, min(x_max, 10.0), 2001)
    if x_max > 10.0:
        xs = np.concatenate([xs, np.geomspace(10.0, x_max, 4001)[1:]])
    q = sol.sol(xs)[0]
    w_end = trapezoid(q, xs)
    # differences, not the right-hand side, which cancels far out
    d2 = np.gradient(q, xs)
    tail = xs >= 0.9 * x_max
    return (q[-1] / (A * x_max ** (2.0 / m)) - 1.0,
            w_end / (asym_coeff_w(m) * x_max ** (1.0 + 2.0 / m)) - 1.0,
            float(np.max(np.abs(d2[tail])) / np.max(np.abs(d2))))


def build_profile(m: float, lam: float, x_max: float, step: float = GRID_STEP,
                  ratio: float = FAR_RATIO, bracket=(np.nan, np.nan)) -> Corrector1D:
    """Tabulate the corrector for a given constant by backward integration."""
    core, q_core, (far, delta_far) = _integrate_profile(m, lam, x_max, step, ratio)
    q0 = float(q_core[0])
    q_core[0] = 0.0  # odd symmetry
    A = asym_coeff_dw(m)
    if far.size:
        x = np.concatenate([core, far[1:]])
        q = np.concatenate([q_core, A * far[1:] ** (2.0 / m) * (1.0 + delta_far[1:])])
        qp_far, _ = _delta_rhs_parts(far[1:], delta_far[1:], lam, m)
        d2 = np.concatenate([riccati_rhs(core, q_core, lam, m), qp_far])
        delta = np.concatenate([np.full(core.size, np.nan), delta_far[1:]])
        delta[core.size - 1] = delta_far[0]
    else:
        x, q = core, q_core
        d2 = riccati_rhs(core, q_core, lam, m)
        delta = None
    # w on the grid from the same interpolants used for evaluation
    tmp = Corrector1D(m, lam, x, np.zeros_like(x), q, d2, min(X_CORE, x[-1]), delta, q0, tuple(bracket))
    w = tmp._w_inside(x)
    return Corrector1D(m, lam, x, w, q, d2, min(X_CORE, x[-1]), delta, q0, tuple(bracket))


def shoot_lambda(m: float, x_max: float = 10.0, bisect_tol: float = 1e-10, *,
                 lambda_search_max: float = 10.0, asym_tol: float = 0.005,
                 value_tol: float = 0.02, require_tail: bool = True,
                 adapt: bool = True, x_max_limit: float = 2e6,
                 strict: bool = True, bracket=None) -> Corrector1D:
    """Solve the 1D corrector.

    ``lambda_m`` is bracketed by bisection on the shot class to width
    ``bisect_tol``, then pinned inside the bracket by requiring the backward
    profile to pass through the origin. With ``adapt`` the grid end ``x_max`` is doubled until the
    derivative ratio is within ``asym_tol`` of ``A_m``, the value ratio within
    ``value_tol`` of its limit and (if ``require_tail``) the second-derivative
    tail check passes. ``strict`` raises if the derivative ratio still fails.
    """
    if m <= 2.0:
        raise ValueError("m must exceed 2")
    lo, hi = bracket if bracket is not None else (0.0, lambda_search_max)
    lo, hi = bisect_lambda(m, lo, hi, bisect_tol)
    lam = refine_lambda(m, lo, hi)
    log.info("m=%g: lambda_m in [%.12f, %.12f]", m, lo, hi)

    def ok(c: Corrector1D) -> bool:
        good = abs(c.dw_ratio() / c.asym_coeff_dw - 1.0) < asym_tol
        good &= abs(c.w_ratio() / c.asym_coeff_w - 1.0) < value_tol
        if require_tail:
            good &= verify_second_derivative_bound(c).passed
        return bool(good)

    if adapt:
        while 2.0 * x_max <= x_max_limit:
            e_dw, e_w, tail = probe_asymptotics(m, lam, x_max)
            if abs(e_dw) < asym_tol and abs(e_w) < value_tol and (tail < 0.1 or not require_tail):
                break
            x_max *= 2.0
    c = build_profile(m, lam, x_max, bracket=(lo, hi))
    while adapt and not ok(c) and 2.0 * x_max <= x_max_limit:
        x_max *= 2.0
        c = build_profile(m, lam, x_max, bracket=(lo, hi))
    if strict and abs(c.dw_ratio() / c.asym_coeff_dw - 1.0) >= asym_tol:
        raise AsymptoteNotReachedError(
            f"derivative ratio {c.dw_ratio():.6f} vs {c.asym_coeff_dw:.6f} at X_max={c.x_max}"
        )
    return c


def riccati_oracle_lambda(m: float, x_far: float = 15.0, max_step: float = GRID_STEP / 2,
                          lo: float = 0.5, hi: float = 5.0, tol: float = 1e-13) -> float:
    """Independent estimate of lambda_m.

    Integrates the Riccati equation backward from the asymptotic branch at
    ``x_far`` with an implicit (Radau) integrator and finds the constant for
    which the trajectory passes through q(0) = 0.
    """
    A = asym_coeff_dw(m)
    cm = c_m(m)

    def q_at_zero(lam):
        q_far = A * x_far ** (2.0 / m) * (1.0 + _delta_seed(x_far, lam, m))
        sol = solve_ivp(
            _scalar_rhs(lam, m), (x_far, 0.0), [q_far],
            method="Radau", rtol=1e-12, atol=1e-14, max_step=max_step,
            jac=lambda x, q: [[cm * m * _abs_pow(q[0], m - 1.0) * np.sign(q[0])]],
        )
        return sol.y[0, -1]

    return float(brentq(q_at_zero, lo, hi, xtol=tol))


# ---------------------------------------------------------------------------
# caching


def save_corrector(c: Corrector1D, prefix) -> tuple[Path, Path]:
    """Write ``<prefix>.csv`` (x, w, dw, d2w, delta) and ``<prefix>.json``."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = prefix.with_suffix(".csv"), prefix.with_suffix(".json")
    delta = c.delta_vals if c.delta_vals is not None else np.full(c.x_grid.size, np.nan)
    table = np.column_stack([c.x_grid, c.w_vals, c.dw_vals, c.d2w_vals, delta])
    np.savetxt(csv_path, table, delimiter=",", header="x,w,dw,d2w,delta", comments="", fmt="%.17g")
    header = {
        "m": c.m, "lambda_m": c.lambda_m, "X_max": c.x_max, "x_core": c.x_core,
        "q0_mismatch": c.q0_mismatch, "lambda_bracket": list(c.lambda_bracket),
    }
    json_path.write_text(json.dumps(header, indent=2))
    return csv_path, json_path


def load_corrector(prefix) -> Corrector1D:
    prefix = Path(prefix)
    header = json.loads(prefix.with_suffix(".json").read_text())
    table = np.loadtxt(prefix.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
    if table.shape[1] != 5 or not np.isclose(table[-1, 0], header["X_max"]):
        raise ValueError(f"corrupt corrector table at {prefix}")
    x, w, dw, d2w, delta = table.T
    has_far = np.any(np.isfinite(delta))
    return Corrector1D(
        float(header["m"]), float(header["lambda_m"]), x, w, dw, d2w,
        float(header["x_core"]), delta if has_far else None,
        float(header.get("q0_mismatch", 0.0)), tuple(header.get("lambda_bracket", (np.nan, np.nan))),
    )
