"""Why the loss ratio stays far from one at desk-scale eps.

Prints, for several monitor settings, the stop reasons, the time of the first
stop, and the split of the loss into continuous trading and forced
liquidation costs. A log-log fit of the liquidation cost against eps is
compared with the exponent of the leading-order term.

Usage: python scripts/desk_scale_diagnostics.py [--paths N]
"""

import argparse

import numpy as np

from merton_impact.cli import build_model
from merton_impact.config import RunConfig
from merton_impact.market_sim import SimConfig, StopReason, run_paths
from merton_impact.merton import pi_star
from merton_impact.second_corrector import build_second_corrector, u_value

SETTINGS = [
    ("default monitor", dict(guard_mult=1.0, cash_floor_mult=0.75)),
    ("band x4", dict(guard_mult=4.0, cash_floor_mult=0.75)),
    ("band x8", dict(guard_mult=8.0, cash_floor_mult=0.75)),
    ("band x50, no cash floor", dict(guard_mult=50.0, cash_floor_mult=0.0)),
]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--paths", type=int, default=4_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", default="0.2,0.1,0.05,0.025")
    args = p.parse_args()

    model, _ = build_model(RunConfig())
    merton = model.merton
    sc = build_second_corrector(merton, model.cmd.lam)
    u = float(u_value(0.0, 1.0, sc))
    ms = model.m_star
    grid = [float(v) for v in args.eps.split(",")]

    c = merton.c_ratio(0.0)
    print(f"consumption rate {c:.3f} W per year, cash weight {1.0 - merton.pi.sum():.3f}, "
          f"pi* {pi_star(merton.pi):.3f}, band pi*/(4d) {pi_star(merton.pi) / (4 * merton.pi.size):.4f}")
    print(f"leading-order scale eps^(2m*) u: exponent {2 * ms:.4f}, u(0, 1) = {u:.4e}")

    for label, kw in SETTINGS:
        print(f"\n== {label} ==")
        liq = []
        for eps in grid:
            res = run_paths(SimConfig(eps, n_paths=args.paths, seed=args.seed, **kw), model)
            rec = res.records
            reasons = {r.name: float(np.mean(rec["reason"] == r)) for r in StopReason if r}
            tau = rec["tau"][rec["reason"] != StopReason.HORIZON]
            s = res.summary()
            liq.append(s["mean_liquidation_cost"])
            print(f"eps={eps:<6g} ratio={res.loss / (eps ** (2 * ms) * u):8.2f}  "
                  f"trade_cost={s['mean_trading_cost']:.2e}  liq_cost={s['mean_liquidation_cost']:.2e}  "
                  f"median_tau={np.nanmedian(tau) if tau.size else float('nan'):.3f}  "
                  + "  ".join(f"{k}={v:.2f}" for k, v in reasons.items()))
        slope = np.polyfit(np.log(grid), np.log(liq), 1)[0]
        print(f"liquidation cost ~ eps^{slope:.3f}")


if __name__ == "__main__":
    main()
