"""Command-line front end.

Subcommands ``solve-corrector``, ``verify``, ``simulate`` and ``converge``.
Exit codes: 0 all checks pass, 1 a check failed, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError, RunConfig
from .corrector1d import (Corrector1D, asym_coeff_dw, asym_coeff_w, load_corrector, save_corrector,
                          shoot_lambda, verify_second_derivative_bound)
from .corrector_md import build_factorization, first_corrector_residual, full_corrector_residual
from .impact import ImpactModel, conjugate_search, fenchel_young_gap
from .market_sim import SimModel, candidate_rate, candidate_rate_phi_form, run_paths, write_trace
from .merton import solve_merton
from .second_corrector import build_second_corrector, feynman_kac_check
from .validator import convergence_study, expansion_report

log = logging.getLogger("merton_impact")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


# ---------------------------------------------------------------------------
# artifacts


def corrector_for(cfg: RunConfig) -> Corrector1D:
    """Cached 1D corrector; a corrupt cache entry is re-solved with a warning."""
    prefix = Path(cfg.cache_dir) / f"corrector_{cfg.corrector_cache_key()}"
    if prefix.with_suffix(".json").exists():
        try:
            c = load_corrector(prefix)
            if np.isclose(c.m, cfg.investor.m):
                log.info("corrector cache hit: %s", prefix)
                return c
            raise ValueError("cached m does not match")
        except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
            warnings.warn(f"corrector cache at {prefix} unusable ({exc}); re-solving", stacklevel=2)
    cc = cfg.corrector
    c = shoot_lambda(cfg.investor.m, cc.x_max, cc.bisect_tol, asym_tol=cc.asym_tol,
                     value_tol=cc.value_tol, require_tail=cc.require_tail, x_max_limit=cc.x_max_limit)
    save_corrector(c, prefix)
    return c


def build_model(cfg: RunConfig):
    market, inv = cfg.market_params(), cfg.investor_params()
    merton = solve_merton(market, inv)
    c1d = corrector_for(cfg)
    if cfg.corrector.lambda_override is not None:
        c1d = dataclasses.replace(c1d, lambda_m=cfg.corrector.lambda_override)
    cmd = build_factorization(market, inv, merton.pi, c1d)
    return SimModel(merton, cmd, ImpactModel.from_corrector(cmd)), c1d


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_solve_corrector(cfg: RunConfig, args) -> int:
    model, c1d = build_model(cfg)
    cmd = model.cmd
    report = {
        "m": c1d.m, "lambda_m": c1d.lambda_m, "X_max": c1d.x_max,
        "gamma": cmd.gamma.tolist(), "beta": cmd.beta.tolist(), "lambda": cmd.lam,
        "pi": model.merton.pi.tolist(), "nu": model.merton.nu,
    }
    print(f"lambda_m = {c1d.lambda_m:.12f}  (X_max = {c1d.x_max:g})")
    print(f"gamma    = {cmd.gamma}")
    print(f"beta     = {cmd.beta}")
    print(f"lambda   = {cmd.lam:.12g}")
    _write_json(Path(args.out or cfg.output_dir) / "constants.json", report)
    return EXIT_PASS


def run_checks(cfg: RunConfig, eps_list=None, seed: int | None = None) -> dict[str, dict]:
    """All residual, duality and Feynman-Kac checks; each entry has value, limit, passed."""
    model, c1d = build_model(cfg)
    cmd, merton, im = model.cmd, model.merton, model.impact
    inv = merton.inv
    rng = np.random.default_rng(cfg.sim.seed if seed is None else seed)
    checks: dict[str, dict] = {}

    def add(name, value, limit, passed=None):
        ok = bool(value <= limit) if passed is None else bool(passed)
        checks[name] = {"value": float(value), "limit": float(limit), "passed": ok}

    add("ode_residual", c1d.max_residual(), 1e-8)
    add("dw_ratio_rel_err", abs(c1d.dw_ratio() / asym_coeff_dw(c1d.m) - 1.0), 0.005)
    add("w_ratio_rel_err", abs(c1d.w_ratio() / asym_coeff_w(c1d.m) - 1.0), 0.02)
    sd = verify_second_derivative_bound(c1d)
    add("d2w_tail_ratio", sd.tail_ratio, 0.1, sd.passed)

    B = cmd.box_halfwidth()
    X = rng.uniform(-B, B, (1000, merton.market.d))
    add("first_corrector_residual", first_corrector_residual(cmd, inv, X), 1e-5)
    worst = 0.0
    for _ in range(100):
        t = rng.uniform(0.0, inv.T * 0.99)
        w = rng.uniform(0.5, 2.0)
        s = rng.uniform(0.5, 2.0, merton.market.d)
        x = rng.uniform(-B, B, merton.market.d)
        xi = (cmd.S_half_inv @ x) * w ** (1.0 + inv.m_star) / s
        worst = max(worst, full_corrector_residual(cmd, merton, inv, t, w, s, xi[None]))
    add("full_corrector_rel_residual", worst, 1e-4)

    s = rng.uniform(0.5, 2.0, (10_000, merton.market.d))
    xs = rng.normal(0.0, 1.0, (10_000, merton.market.d))
    gap = fenchel_young_gap(im, s, xs, im.phi_grad(s, xs))
    add("fenchel_young_gap", float(np.max(np.abs(gap) / np.maximum(1.0, im.phi(s, xs)))), 1e-8)
    rel = 0.0
    for k in range(5):
        phi = float(im.phi(s[k], xs[k]))
        rel = max(rel, abs(conjugate_search(im, s[k], xs[k]) - phi) / max(phi, 1e-300))
    add("conjugate_search_rel_err", rel, 1e-4)

    sc = build_second_corrector(merton, cmd.lam)
    add("gbar_form_gap", sc.max_form_gap(), 1e-7)
    add("gbar_terminal", abs(float(sc.bar_g(inv.T))), 0.0)
    fk = feynman_kac_check(cfg.sim.t0, cfg.sim.w0, cfg.validator.fk_paths, cfg.sim.seed, sc,
                           n_steps=cfg.validator.fk_steps)
    add("feynman_kac_z", fk.z_score, 3.0)

    for eps in eps_list or ():
        W = rng.uniform(0.5, 2.0, 50)
        S = rng.uniform(0.5, 2.0, (50, merton.market.d))
        H = merton.pi * W[:, None] / S * (1.0 + 0.05 * rng.standard_normal(S.shape))
        a = candidate_rate(0.5 * inv.T, W, S, H, eps, cmd, merton.pi)
        b = candidate_rate_phi_form(0.5 * inv.T, W, S, H, eps, cmd, merton, im)
        add(f"theta_forms_eps_{eps:g}", float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a)))), 1e-10)
    return checks


def cmd_verify(cfg: RunConfig, args) -> int:
    checks = run_checks(cfg, args.eps, args.seed)
    for name, c in checks.items():
        flag = "PASS" if c["passed"] else "FAIL"
        print(f"[{flag}] {name:32s} {c['value']:.3e}  (limit {c['limit']:.1e})")
    ok = all(c["passed"] for c in checks.values())
    _write_json(Path(args.out or cfg.output_dir) / "verify.json", {"checks": checks, "pass": ok})
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_simulate(cfg: RunConfig, args) -> int:
    model, _ = build_model(cfg)
    out = Path(args.out or cfg.output_dir)
    eps_list = args.eps if args.eps else [cfg.validator.eps_grid[-1]]
    rows, ok = [], True
    for eps in eps_list:
        sc = cfg.sim_config(eps)
        if args.trace and sc.n_trace == 0:
            sc = dataclasses.replace(sc, n_trace=min(10, sc.n_paths))
        res = run_paths(sc, model)
        row = res.summary()
        row["v0"] = res.v0
        if eps == 0.0:
            row["pass"] = bool(abs(res.mean_utility - res.v0) <= 3.0 * res.std_err)
        else:
            row["pass"] = bool(res.mean_utility <= res.v0 + 3.0 * res.std_err)
        ok &= row["pass"]
        rows.append(row)
        print(f"eps={eps:g}: mean utility {res.mean_utility:.6f} +- {res.std_err:.2e}, "
              f"V0 {res.v0:.6f}, stopped early {res.frac_stopped_early:.3f}")
        if res.trace is not None:
            write_trace(res.trace, out / f"trace_eps_{eps:g}.csv")
    _write_json(out / "simulate.json", {"runs": rows, "pass": ok})
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_converge(cfg: RunConfig, args) -> int:
    model, _ = build_model(cfg)
    sc = build_second_corrector(model.merton, model.cmd.lam)
    grid = args.eps if args.eps else list(cfg.validator.eps_grid)
    rep = convergence_study(grid, cfg.sim_config(grid[0]), model, sc,
                            cfg.validator.ratio_tol, cfg.validator.slack_tol)
    js, table = expansion_report(rep)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "convergence.json").write_text(js)
    (out / "convergence.csv").write_text(table)
    for r in rep.per_eps:
        print(f"eps={r.eps:g}: loss {r.loss:.4e}  ratio {r.loss_ratio:.3f} +- {r.std_err_ratio:.3f}  "
              f"stopped {r.frac_stopped:.3f}")
    print(f"checks: {rep.checks}  pass={rep.passed}")
    return EXIT_PASS if rep.passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# entry point


def _eps_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad eps list {text!r}") from exc
    if any(v < 0.0 for v in vals):
        raise argparse.ArgumentTypeError("eps values must be nonnegative")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="merton-impact", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI or JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--paths", type=int)
    common.add_argument("--eps", type=_eps_list, help="comma-separated impact scales")
    common.add_argument("--trace", action="store_true", help="write per-path trace CSV")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in (("solve-corrector", cmd_solve_corrector), ("verify", cmd_verify),
                     ("simulate", cmd_simulate), ("converge", cmd_converge)):
        sp = sub.add_parser(name, parents=[common])
        sp.set_defaults(func=fn)
    return p


def resolve_config(args) -> RunConfig:
    cfg = cfgmod.load(args.config) if args.config else RunConfig()
    sim = cfg.sim
    if args.seed is not None:
        sim = dataclasses.replace(sim, seed=args.seed)
    if args.paths is not None:
        if args.paths < 1:
            raise ConfigError("--paths must be positive")
        sim = dataclasses.replace(sim, n_paths=args.paths)
    cfg = dataclasses.replace(cfg, sim=sim)
    cfgmod.validate(cfg)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(cfg, args)


if __name__ == "__main__":
    sys.exit(main())
