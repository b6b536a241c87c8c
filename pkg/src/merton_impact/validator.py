"""Convergence study of the simulated utility loss against the leading-order term.

For each impact scale ``eps`` the candidate strategy is simulated with common
random numbers and the renormalized loss

    loss_ratio(eps) = (V0(t0, w0) - mean_utility(eps)) / (eps^{2m*} u(t0, w0))

is compared with 1.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .market_sim import SimConfig, SimModel, run_paths, time_step
from .merton import utility
from .second_corrector import SecondCorrector, u_value

RATIO_TOL = 0.2
SLACK_TOL = 0.1
CSV_COLUMNS = ("eps", "mean_utility", "std_err", "loss", "loss_ratio", "std_err_ratio", "frac_stopped")


class InsufficientPathsWarning(UserWarning):
    pass


def theoretical_correction(t: float, w: float, sc: SecondCorrector, R: float) -> float:
    """lambda (1-R) w^{2m*} gbar(t) U(w), checked against u(t, w)."""
    if w <= 0.0:
        raise ValueError("wealth must be positive")
    ms = sc.merton.inv.m_star
    val = float(sc.lam * (1.0 - R) * w ** (2.0 * ms) * sc.bar_g(t) * utility(w, R))
    ref = float(u_value(t, w, sc))
    if not math.isclose(val, ref, rel_tol=1e-12, abs_tol=1e-300):
        raise AssertionError(f"leading-order term {val!r} disagrees with u(t, w) = {ref!r}")
    return val


@dataclass
class EpsRow:
    eps: float
    mean_utility: float
    std_err: float
    loss: float
    loss_ratio: float
    std_err_ratio: float
    frac_stopped: float
    diagnostics: dict = field(default_factory=dict)


@dataclass
class ConvergenceReport:
    config_hash: str
    eps_grid: list[float]
    v0: float
    u: float
    per_eps: list[EpsRow]
    passed: bool
    fitted_remainder_slope: float
    checks: dict = field(default_factory=dict)

    @property
    def loss_ratio(self) -> list[float]:
        return [r.loss_ratio for r in self.per_eps]

    @property
    def std_err_ratio(self) -> list[float]:
        return [r.std_err_ratio for r in self.per_eps]


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _study_payload(eps_grid, base: SimConfig, model: SimModel) -> dict:
    mk, inv = model.market, model.merton.inv
    sim = dataclasses.asdict(base)
    sim.pop("epsilon")
    sim.pop("workers")  # results do not depend on the worker count
    return {
        "eps_grid": list(eps_grid),
        "market": {"mu": mk.mu, "sigma": mk.sigma, "r": mk.r},
        "investor": dataclasses.asdict(inv),
        "sim": sim,
        "lambda": None if model.cmd is None else model.cmd.lam,
    }


def ratio_checks(ratios, se_ratios, ratio_tol: float = RATIO_TOL, slack_tol: float = SLACK_TOL):
    """Band check on the smallest eps plus the monotone-trend check.

    ``ratios`` are ordered by decreasing eps.
    """
    last, last_se = ratios[-1], se_ratios[-1]
    band = abs(last - 1.0) <= ratio_tol or abs(last - 1.0) <= 3.0 * last_se
    dev = np.abs(np.asarray(ratios) - 1.0)
    trend = bool(np.all(dev[1:] <= dev[:-1] + slack_tol))
    return bool(band), trend


def remainder_slope(eps, losses, u: float, m_star: float) -> float:
    """Least-squares slope of log|loss - eps^{2m*} u| against log eps."""
    eps = np.asarray(eps, dtype=np.float64)
    rem = np.abs(np.asarray(losses) - eps ** (2.0 * m_star) * u)
    ok = rem > 0.0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(eps[ok]), np.log(rem[ok]), 1)[0])


def convergence_study(eps_grid, base: SimConfig, model: SimModel, sc: SecondCorrector,
                      ratio_tol: float = RATIO_TOL, slack_tol: float = SLACK_TOL) -> ConvergenceReport:
    """Run the candidate strategy on each eps with shared increments and rate the loss.

    All runs use one time step (the one required by the smallest eps), so the
    Brownian increments of every path coincide across the grid.
    """
    eps_grid = [float(e) for e in eps_grid]
    if not eps_grid:
        raise ValueError("empty eps grid")
    if any(e <= 0.0 for e in eps_grid) or any(b >= a for a, b in zip(eps_grid, eps_grid[1:])):
        raise ValueError("eps grid must be positive and strictly decreasing")
    merton = model.merton
    inv = merton.inv
    if base.t0 >= inv.T:
        raise ValueError("t0 must be before the horizon: the leading-order term vanishes")
    u = float(u_value(base.t0, base.w0, sc))
    if u <= 0.0:
        raise ValueError("leading-order term is not positive")
    ms = inv.m_star
    dt = base.dt if base.dt is not None else min(
        time_step(dataclasses.replace(base, epsilon=e), inv.T, ms) for e in eps_grid)
    v0 = float(merton.value(base.t0, base.w0))
    rows = []
    for e in eps_grid:
        res = run_paths(dataclasses.replace(base, epsilon=e, dt=dt), model)
        scale = e ** (2.0 * ms) * u
        loss = v0 - res.mean_utility
        ratio, se_ratio = loss / scale, res.std_err / scale
        if se_ratio > ratio_tol / 2.0:
            warnings.warn(f"eps={e}: std_err_ratio {se_ratio:.3g} exceeds half the tolerance; "
                          "increase the number of paths", InsufficientPathsWarning, stacklevel=2)
        s = res.summary()
        diag = {k: s[k] for k in ("raw_mean_utility", "raw_std_err", "frac_weight_breach",
                                  "frac_wealth_floor", "mean_trading_cost", "mean_liquidation_cost",
                                  "median_max_abs_x", "median_max_wealth_gap", "dt", "n_steps")}
        rows.append(EpsRow(e, res.mean_utility, res.std_err, loss, ratio, se_ratio,
                           res.frac_stopped_early, diag))
    band, trend = ratio_checks([r.loss_ratio for r in rows], [r.std_err_ratio for r in rows],
                               ratio_tol, slack_tol)
    stopped = [r.frac_stopped for r in rows]
    stop_trend = bool(all(b < a for a, b in zip(stopped, stopped[1:]))) if len(rows) > 1 else True
    lower_bound = bool(all(r.mean_utility <= v0 + 3.0 * r.std_err for r in rows))
    checks = {"band": band, "trend": trend, "stop_fraction_decreasing": stop_trend,
              "lower_bound": lower_bound}
    slope = remainder_slope(eps_grid, [r.loss for r in rows], u, ms)
    return ConvergenceReport(config_hash(_study_payload(eps_grid, base, model)), eps_grid, v0, u,
                             rows, bool(band and trend and stop_trend), slope, checks)


def step_halving_check(eps: float, base: SimConfig, model: SimModel, sc: SecondCorrector) -> dict:
    """Loss ratio at dt and dt/2 on the same Brownian paths.

    The coarse run sums pairs of fine increments, so both runs are driven by
    one Brownian path.
    """
    inv = model.merton.inv
    dt = base.dt if base.dt is not None else time_step(dataclasses.replace(base, epsilon=eps),
                                                       inv.T, inv.m_star)
    scale = eps ** (2.0 * inv.m_star) * float(u_value(base.t0, base.w0, sc))
    coarse = run_paths(dataclasses.replace(base, epsilon=eps, dt=dt, substeps=2), model)
    fine = run_paths(dataclasses.replace(base, epsilon=eps, dt=dt / 2.0, substeps=1), model)
    rc, rf = coarse.loss / scale, fine.loss / scale
    se = max(coarse.loss_std_err, fine.loss_std_err) / scale
    return {"eps": eps, "dt": dt, "ratio_dt": rc, "ratio_half_dt": rf, "std_err_ratio": se,
            "stable": bool(abs(rc - rf) < se)}


# ---------------------------------------------------------------------------
# rendering


def report_to_dict(report: ConvergenceReport) -> dict:
    return {
        "config_hash": report.config_hash,
        "eps_grid": list(report.eps_grid),
        "v0": report.v0,
        "u": report.u,
        "per_eps": [dataclasses.asdict(r) for r in report.per_eps],
        "pass": report.passed,
        "fitted_remainder_slope": report.fitted_remainder_slope,
        "checks": dict(report.checks),
    }


def report_from_dict(d: dict) -> ConvergenceReport:
    rows = [EpsRow(**r) for r in d["per_eps"]]
    return ConvergenceReport(d["config_hash"], [float(e) for e in d["eps_grid"]], float(d["v0"]),
                             float(d["u"]), rows, bool(d["pass"]),
                             float(d["fitted_remainder_slope"]), dict(d.get("checks", {})))


def expansion_report(report: ConvergenceReport) -> tuple[str, str]:
    """Render the report as (JSON text, CSV text)."""
    if not report.per_eps:
        raise ValueError("report has no rows")
    js = json.dumps(report_to_dict(report), indent=2, sort_keys=True, default=_jsonable,
                    allow_nan=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.per_eps:
        w.writerow([repr(float(getattr(r, c))) for c in CSV_COLUMNS])
    return js + "\n", buf.getvalue()


def parse_report(js: str) -> ConvergenceReport:
    return report_from_dict(json.loads(js))


def parse_csv_table(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and tuple(rows[0].keys()) != CSV_COLUMNS:
        raise ValueError(f"unexpected columns {tuple(rows[0].keys())}")
    return [{k: float(v) for k, v in r.items()} for r in rows]
