"""Monte Carlo evaluation of the candidate impact-aware strategy.

Prices are multi-asset geometric Brownian motions. The frictional investor
trades at the feedback rate derived from the multidimensional corrector,
consumes at the frictionless rate ``g(t)^{-1/R} W`` and liquidates linearly
over a window of length ``eps^{2m*}`` either when the admissibility monitor
fires or at ``T - eps^{2m*}``. Every frictional path is driven by the same
increments as a continuously rebalanced frictionless path, which serves as a
control variate for the utility loss.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .corrector_md import CorrectorMD, varpi_full_grad, varpi_tilde_grad
from .impact import ImpactModel, signed_power
from .merton import MarketParams, MertonSolution, pi_star, utility
from .rng import brownian_increments

WEALTH_FLOOR_FRAC = 1e-8


class StopReason(IntEnum):
    NONE = 0
    WEIGHT_BREACH = 1
    WEALTH_FLOOR = 2
    HORIZON = 3


class Phase(IntEnum):
    TRADING = 0
    LIQUIDATING = 1
    CASH = 2


@dataclass(frozen=True)
class SimConfig:
    epsilon: float
    n_paths: int = 10_000
    seed: int = 0
    n_steps_base: int = 500
    dt_factor: float = 0.1
    t0: float = 0.0
    w0: float = 1.0
    s0: tuple[float, ...] = (1.0, 1.0)
    h0_mode: str = "merton"
    guard_mult: float = 1.0
    cash_floor_mult: float = 0.75
    dt: float | None = None
    substeps: int = 1
    batch_size: int = 2_000
    workers: int = 1
    n_trace: int = 0

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be nonnegative")
        if self.n_paths < 1 or self.n_steps_base < 1 or self.batch_size < 1:
            raise ValueError("path, step and batch counts must be positive")
        if self.h0_mode not in ("merton", "cash"):
            raise ValueError(f"unknown h0_mode {self.h0_mode!r}")
        if self.w0 <= 0.0 or min(self.s0) <= 0.0:
            raise ValueError("initial wealth and prices must be positive")
        if self.substeps < 1 or self.workers < 1:
            raise ValueError("substeps and workers must be positive")


def time_step(cfg: SimConfig, T: float, m_star: float) -> float:
    """dt_factor * eps^{2m*}, capped by (T - t0) / n_steps_base."""
    if cfg.dt is not None:
        return cfg.dt
    cap = (T - cfg.t0) / cfg.n_steps_base
    if cfg.epsilon == 0.0:
        return cap
    return min(cfg.dt_factor * cfg.epsilon ** (2.0 * m_star), cap)


def time_grid(t0: float, T: float, dt: float) -> NDArray[np.float64]:
    n = max(1, int(math.ceil((T - t0) / dt - 1e-9)))
    return np.linspace(t0, T, n + 1)


@dataclass(frozen=True)
class SimModel:
    merton: MertonSolution
    cmd: CorrectorMD | None = None
    impact: ImpactModel | None = None

    @property
    def market(self) -> MarketParams:
        return self.merton.market

    @property
    def m_star(self) -> float:
        return self.merton.inv.m_star


@dataclass
class PathState:
    """State of a batch of paths at time ``t``; arrays are indexed by path."""

    t: float
    S: NDArray[np.float64]
    W_eps: NDArray[np.float64]
    H: NDArray[np.float64]
    utility_acc: NDArray[np.float64]
    phase: NDArray[np.int8]
    stopped_reason: NDArray[np.int8]
    tau: NDArray[np.float64]
    H_tau: NDArray[np.float64]
    liq_len: NDArray[np.float64]

    @classmethod
    def initial(cls, n: int, t0: float, w0: float, s0, H0) -> "PathState":
        d = len(s0)
        return cls(
            t=t0,
            S=np.tile(np.asarray(s0, dtype=np.float64), (n, 1)),
            W_eps=np.full(n, float(w0)),
            H=np.tile(np.asarray(H0, dtype=np.float64), (n, 1)),
            utility_acc=np.zeros(n),
            phase=np.zeros(n, dtype=np.int8),
            stopped_reason=np.zeros(n, dtype=np.int8),
            tau=np.full(n, np.nan),
            H_tau=np.zeros((n, d)),
            liq_len=np.full(n, np.nan),
        )

    @property
    def liquidating(self) -> NDArray[np.bool_]:
        return self.phase == Phase.LIQUIDATING

    @property
    def cash(self) -> NDArray[np.float64]:
        return self.W_eps - np.sum(self.H * self.S, axis=-1)


# ---------------------------------------------------------------------------
# building blocks


def _check_wealth(W):
    if np.any(np.asarray(W) <= 0.0):
        raise ValueError("wealth must be positive")


def step_prices(S, dt: float, dB, market: MarketParams):
    """Exact log-normal update with constant coefficients."""
    sig = market.sigma
    drift = (market.mu - 0.5 * np.sum(sig * sig, axis=1)) * dt
    return np.asarray(S) * np.exp(drift + np.asarray(dB) @ sig.T)


def rescaled_displacement(t, W_eps, S, H, epsilon: float, pi, S_half, m_star: float):
    """X = S_half (H*S/W - pi) / (eps W)^{m*}."""
    del t
    _check_wealth(W_eps)
    W = np.asarray(W_eps, dtype=np.float64)
    dev = np.asarray(H) * np.asarray(S) / W[..., None] - np.asarray(pi)
    return (dev @ np.asarray(S_half).T) / (epsilon * W[..., None]) ** m_star


def candidate_rate(t, W_eps, S, H, epsilon: float, cmd: CorrectorMD, pi):
    """Feedback trading rate in shares per unit time.

    theta_j = -(eps W)^{-m*} W/(kappa^{m-1} s_j) sum_i |W_i|^{m-2} W_i (S^{-1})_{ij},
    with ``W_i`` the gradient of the rescaled corrector at the displacement.
    """
    ms = cmd.m_star
    X = rescaled_displacement(t, W_eps, S, H, epsilon, pi, cmd.S_half, ms)
    grad = varpi_tilde_grad(cmd, X)
    W = np.asarray(W_eps, dtype=np.float64)[..., None]
    pw = signed_power(grad, cmd.m - 1.0) @ cmd.S_half_inv
    return -(epsilon * W) ** (-ms) * W / (cmd.kappa ** (cmd.m - 1.0) * np.asarray(S)) * pw


def candidate_rate_phi_form(t, W_eps, S, H, epsilon: float, cmd: CorrectorMD,
                            merton: MertonSolution, impact: ImpactModel):
    """The same rate written as eps^{-1} Phi_x(s, -eps^{3m*} varpi_xi / V0_w)."""
    ms = cmd.m_star
    W = np.asarray(W_eps, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    h0 = merton.pi * W[..., None] / S
    xi = (np.asarray(H) - h0) / epsilon**ms
    grad = varpi_full_grad(cmd, merton.g_fn, t, W, S, xi)
    V_w = merton.g_fn(t) * W ** (-merton.inv.R)
    return impact.phi_grad(S, -(epsilon ** (3.0 * ms)) * grad / np.asarray(V_w)[..., None]) / epsilon


def admissibility_monitor(state: PathState, pi, guard_mult: float = 1.0,
                          cash_floor_mult: float = 0.75) -> NDArray[np.bool_]:
    """True where liquidation must start: a weight left its band or cash ran low."""
    pi = np.asarray(pi, dtype=np.float64)
    ps = pi_star(pi)
    band = ps / (4.0 * pi.size) * guard_mult
    W = state.W_eps
    with np.errstate(divide="ignore", invalid="ignore"):
        weights = state.H * state.S / W[:, None]
        cash_frac = state.cash / W
    out_of_band = np.any(np.abs(weights - pi) > band, axis=-1)
    return out_of_band | (cash_frac < cash_floor_mult * ps) | ~(W > 0.0)


def liquidation_holdings(H_tau, tau, liq_len, t_next):
    """Linear schedule H_tau * (1 - (t - tau)/L), floored at zero."""
    frac = np.clip(1.0 - (t_next - tau) / liq_len, 0.0, 1.0)
    return H_tau * frac[:, None]


def liquidation_phase(state: PathState, epsilon: float, dt: float, T: float,
                      m_star: float, start=None) -> NDArray[np.float64]:
    """Open liquidation windows for ``start`` paths and return the next holdings.

    A window has length ``eps^{2m*}``; if it would run past ``T`` it is
    truncated at ``T`` and the sell rate grows so that holdings still reach
    zero at the window end. Returns the holdings after one step for the paths
    currently liquidating (other rows are unchanged copies of ``H``).
    """
    if start is not None and np.any(start):
        window = epsilon ** (2.0 * m_star)
        state.tau[start] = state.t
        state.H_tau[start] = state.H[start]
        state.liq_len[start] = np.minimum(window, max(T - state.t, dt))
        state.phase[start] = Phase.LIQUIDATING
    H_next = state.H.copy()
    liq = state.liquidating
    if np.any(liq):
        H_next[liq] = liquidation_holdings(state.H_tau[liq], state.tau[liq], state.liq_len[liq],
                                           state.t + dt)
    return H_next


def step_wealth(state: PathState, theta, c, dt: float, dB, market: MarketParams,
                impact: ImpactModel | None, epsilon: float):
    """Self-financing Euler update of marked-to-market wealth; returns (W', H', S').

    Interest accrues on cash ``W - H.S``, consumption is paid, positions earn
    ``H.(S' - S)`` and trading at ``theta`` costs ``theta . f(S, eps theta)``.
    """
    S_new = step_prices(state.S, dt, dB, market)
    theta = np.asarray(theta, dtype=np.float64)
    cash = state.W_eps - np.sum(state.H * state.S, axis=-1)
    W_new = (state.W_eps + market.r * cash * dt - np.asarray(c) * dt
             + np.sum(state.H * (S_new - state.S), axis=-1))
    if impact is not None and epsilon > 0.0:
        # theta . f(s, eps theta) = eps^{1/(m-1)} theta . f(s, theta)
        W_new = W_new - epsilon ** impact.alpha * impact.execution_cost(state.S, theta) * dt
    return W_new, state.H + theta * dt, S_new


# ---------------------------------------------------------------------------
# path engine


@dataclass
class SimResult:
    epsilon: float
    mean_utility: float
    std_err: float
    frac_stopped_early: float
    v0: float
    raw_mean_utility: float
    raw_std_err: float
    loss: float
    loss_std_err: float
    dt: float
    n_steps: int
    n_paths: int
    records: dict[str, NDArray] = field(repr=False)
    trace: list[dict] | None = field(default=None, repr=False)

    def summary(self) -> dict:
        return {
            "eps": self.epsilon,
            "mean_utility": self.mean_utility,
            "std_err": self.std_err,
            "raw_mean_utility": self.raw_mean_utility,
            "raw_std_err": self.raw_std_err,
            "loss": self.loss,
            "loss_std_err": self.loss_std_err,
            "frac_stopped": self.frac_stopped_early,
            "frac_weight_breach": float(np.mean(self.records["reason"] == StopReason.WEIGHT_BREACH)),
            "frac_wealth_floor": float(np.mean(self.records["reason"] == StopReason.WEALTH_FLOOR)),
            "mean_trading_cost": float(np.mean(self.records["cost_trading"])),
            "mean_liquidation_cost": float(np.mean(self.records["cost_liquidation"])),
            "median_max_abs_x": float(np.median(self.records["max_abs_x"])),
            "median_max_wealth_gap": float(np.median(self.records["max_wealth_gap"])),
            "dt": self.dt,
            "n_steps": self.n_steps,
            "n_paths": self.n_paths,
        }


def _initial_holdings(cfg: SimConfig, merton: MertonSolution):
    s0 = np.asarray(cfg.s0, dtype=np.float64)
    if s0.size != merton.market.d:
        raise ValueError(f"s0 has {s0.size} entries, market has {merton.market.d} assets")
    if cfg.h0_mode == "merton":
        return merton.pi * cfg.w0 / s0
    return np.zeros_like(s0)


def _simulate_batch(cfg: SimConfig, model: SimModel, grid, paths, trace_ids):
    merton, market = model.merton, model.market
    inv = merton.inv
    R, T, ms = inv.R, inv.T, model.m_star
    eps = cfg.epsilon
    pi = merton.pi
    n, d = paths.size, market.d
    n_steps = grid.size - 1
    dt = grid[1] - grid[0]
    dB = brownian_increments(cfg.seed, paths, n_steps, d, dt, cfg.substeps)
    floor = WEALTH_FLOOR_FRAC * cfg.w0
    frictional = eps > 0.0
    if frictional and (model.cmd is None or model.impact is None):
        raise ValueError("a frictional run needs the corrector and the impact model")

    st = PathState.initial(n, cfg.t0, cfg.w0, cfg.s0, _initial_holdings(cfg, merton))
    W0 = np.full(n, float(cfg.w0))
    S0 = st.S.copy()
    util0 = np.zeros(n)
    cost_trade = np.zeros(n)
    cost_liq = np.zeros(n)
    max_abs_x = np.zeros(n)
    max_gap = np.zeros(n)
    t_liq = T - eps ** (2.0 * ms) if frictional else np.inf
    c_prev = c0_prev = None
    trace_rows = []

    for k in range(n_steps + 1):
        t = grid[k]
        st.t = t
        alive = st.stopped_reason != StopReason.WEALTH_FLOOR
        c_ratio = merton.c_ratio(t)
        c0 = c_ratio * W0
        if frictional:
            trading = (st.phase == Phase.TRADING) & alive
            if k < n_steps:
                breach = trading & admissibility_monitor(st, pi, cfg.guard_mult, cfg.cash_floor_mult)
                horizon = trading & ~breach & (t >= t_liq - 1e-12)
                st.stopped_reason[breach] = StopReason.WEIGHT_BREACH
                st.stopped_reason[horizon] = StopReason.HORIZON
                start = breach | horizon
            else:
                start = np.zeros(n, dtype=bool)
            H_next = liquidation_phase(st, eps, dt, T, ms, start)
            trading = (st.phase == Phase.TRADING) & alive
            liq = st.liquidating & alive
            theta = np.zeros((n, d))
            if np.any(trading):
                theta[trading] = candidate_rate(t, st.W_eps[trading], st.S[trading], st.H[trading],
                                                eps, model.cmd, pi)
                X = rescaled_displacement(t, st.W_eps[trading], st.S[trading], st.H[trading],
                                          eps, pi, model.cmd.S_half, ms)
                max_abs_x[trading] = np.maximum(max_abs_x[trading], np.max(np.abs(X), axis=1))
            theta[liq] = (H_next[liq] - st.H[liq]) / dt
            c = np.where(alive, c_ratio * np.maximum(st.W_eps, 0.0), 0.0)
            # during liquidation keep cash positive
            cash = st.cash
            clip = liq & (c * dt > 0.5 * np.maximum(cash, 0.0))
            c[clip] = 0.5 * np.maximum(cash[clip], 0.0) / dt
        else:
            c = c0
            theta = None

        if k > 0:
            st.utility_acc += 0.5 * dt * (utility(c_prev, R) + utility(c, R))
            util0 += 0.5 * dt * (utility(c0_prev, R) + utility(c0, R))
        if trace_ids:
            for j in trace_ids:
                row = {"path": int(paths[j]), "t": t, "W_eps": float(st.W_eps[j] if frictional else W0[j]),
                       "W0": float(W0[j]), "c": float(c[j])}
                S_row = st.S[j] if frictional else S0[j]
                for i in range(d):
                    row[f"S{i}"] = float(S_row[i])
                    row[f"H{i}"] = float(st.H[j, i]) if frictional else float(pi[i] * W0[j] / S0[j, i])
                if frictional:
                    Xj = rescaled_displacement(t, max(st.W_eps[j], floor), st.S[j], st.H[j], eps,
                                               pi, model.cmd.S_half, ms)
                    for i in range(d):
                        row[f"X{i}"] = float(Xj[i])
                        row[f"theta{i}"] = float(theta[j, i])
                trace_rows.append(row)
        if k == n_steps:
            break
        c_prev, c0_prev = c, c0

        # frictionless coupled path, rebalanced to pi every step
        S0_new = step_prices(S0, dt, dB[:, k], market)
        W0 = (W0 + market.r * (1.0 - pi.sum()) * W0 * dt - c0 * dt
              + W0 * np.sum(pi * (S0_new - S0) / S0, axis=-1))
        S0 = S0_new
        if frictional:
            cost_rate = eps ** model.impact.alpha * model.impact.execution_cost(st.S, theta)
            cost_trade += np.where(trading, cost_rate * dt, 0.0)
            cost_liq += np.where(liq, cost_rate * dt, 0.0)
            W_new, H_new, S_new = step_wealth(st, theta, c, dt, dB[:, k], market, model.impact, eps)
            H_new[liq] = H_next[liq]  # exact schedule, no drift from rounding
            dead = ~alive | (W_new <= floor)
            newly = dead & alive
            st.stopped_reason[newly] = StopReason.WEALTH_FLOOR
            W_new[dead] = 0.0
            H_new[dead] = 0.0
            st.W_eps, st.H, st.S = W_new, H_new, S_new
            done = st.liquidating & (st.t + dt >= st.tau + st.liq_len - 1e-12)
            st.phase[done] = Phase.CASH
            with np.errstate(divide="ignore", invalid="ignore"):
                gap = np.abs(np.where(W0 > 0.0, st.W_eps / W0 - 1.0, 0.0))
            max_gap = np.maximum(max_gap, np.where(alive, gap, max_gap))

    if frictional:
        W_T = np.maximum(st.W_eps, 0.0)
        # shares are worthless at T: the lump is the remaining cash
        lump = np.maximum(W_T - np.sum(st.H * st.S, axis=-1), 0.0)
        U_eps = st.utility_acc + utility(lump, R)
    else:
        W_T = W0
        U_eps = util0 + utility(W0, R)
    U0 = util0 + utility(W0, R)
    rec = {
        "path": paths,
        "utility": U_eps,
        "utility_frictionless": U0,
        "terminal_wealth": W_T,
        "terminal_wealth_frictionless": W0,
        "reason": st.stopped_reason.copy(),
        "tau": st.tau.copy(),
        "cost_trading": cost_trade,
        "cost_liquidation": cost_liq,
        "max_abs_x": max_abs_x,
        "max_wealth_gap": max_gap,
    }
    return rec, trace_rows


def run_paths(cfg: SimConfig, model: SimModel) -> SimResult:
    """Simulate ``cfg.n_paths`` paths and aggregate realized utilities.

    For ``eps > 0`` the reported mean utility uses the coupled frictionless
    path as control variate: ``V0 - mean(U0_path - U_path)``. The raw sample
    mean is kept alongside. For ``eps = 0`` only the raw estimate is used.
    """
    merton = model.merton
    inv = merton.inv
    if cfg.t0 >= inv.T:
        raise ValueError("t0 must be before the horizon")
    dt = time_step(cfg, inv.T, model.m_star)
    grid = time_grid(cfg.t0, inv.T, dt)
    dt = grid[1] - grid[0]
    starts = list(range(0, cfg.n_paths, cfg.batch_size))
    batches = [np.arange(s, min(s + cfg.batch_size, cfg.n_paths)) for s in starts]

    def work(idx):
        trace_ids = [j for j, p in enumerate(idx) if p < cfg.n_trace]
        return _simulate_batch(cfg, model, grid, idx, trace_ids)

    if cfg.workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            outs = list(ex.map(work, batches))
    else:
        outs = [work(b) for b in batches]
    # deterministic reduction in path order
    records = {k: np.concatenate([o[0][k] for o in outs]) for k in outs[0][0]}
    trace = [row for o in outs for row in o[1]] if cfg.n_trace else None

    n = cfg.n_paths
    v0 = float(merton.value(cfg.t0, cfg.w0))
    U, U0 = records["utility"], records["utility_frictionless"]
    raw_mean = float(np.mean(U))
    raw_se = float(np.std(U, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    if cfg.epsilon > 0.0:
        D = U0 - U
        loss = float(np.mean(D))
        loss_se = float(np.std(D, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        mean_u, se = v0 - loss, loss_se
        early = (records["reason"] == StopReason.WEIGHT_BREACH) | (records["reason"] == StopReason.WEALTH_FLOOR)
        frac = float(np.mean(early))
    else:
        mean_u, se = raw_mean, raw_se
        loss, loss_se = v0 - raw_mean, raw_se
        frac = 0.0
    return SimResult(cfg.epsilon, mean_u, se, frac, v0, raw_mean, raw_se, loss, loss_se,
                     float(dt), grid.size - 1, n, records, trace)


def write_trace(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return path
    keys = list(rows[0].keys())
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
    return path
