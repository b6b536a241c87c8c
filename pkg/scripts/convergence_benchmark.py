"""Loss-ratio study on the benchmark plus a step-halving stability check.

Usage: python scripts/convergence_benchmark.py [--paths N] [--seed S] [--out DIR]
"""

import argparse
import json
from pathlib import Path

from merton_impact.cli import build_model
from merton_impact.config import RunConfig
from merton_impact.market_sim import SimConfig
from merton_impact.second_corrector import build_second_corrector
from merton_impact.validator import convergence_study, expansion_report, step_halving_check


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", default="0.2,0.1,0.05,0.025")
    p.add_argument("--halving-paths", type=int, default=2_000)
    p.add_argument("--out", type=Path, default=Path("out/convergence"))
    args = p.parse_args()

    cfg = RunConfig()
    model, _ = build_model(cfg)
    sc = build_second_corrector(model.merton, model.cmd.lam)
    grid = [float(v) for v in args.eps.split(",")]
    base = SimConfig(grid[0], n_paths=args.paths, seed=args.seed)

    rep = convergence_study(grid, base, model, sc)
    js, table = expansion_report(rep)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "convergence.json").write_text(js)
    (args.out / "convergence.csv").write_text(table)
    print(table)
    print(f"checks: {rep.checks}")

    halving = []
    for eps in grid:
        h = step_halving_check(eps, SimConfig(eps, n_paths=args.halving_paths, seed=args.seed), model, sc)
        halving.append(h)
        print(f"eps={eps:g}: ratio dt={h['ratio_dt']:.3f}  dt/2={h['ratio_half_dt']:.3f}  "
              f"+-{h['std_err_ratio']:.3f}  stable={h['stable']}")
    (args.out / "step_halving.json").write_text(json.dumps(halving, indent=2) + "\n")


if __name__ == "__main__":
    main()
