"""Top-level acceptance criteria on the d=2 benchmark.

Each test records one PASS/FAIL line, printed in the terminal summary.
"""

import time

import numpy as np
import pytest

from merton_impact.corrector1d import (asym_coeff_dw, asym_coeff_w, shoot_lambda,
                                       verify_second_derivative_bound)
from merton_impact.corrector_md import first_corrector_residual, full_corrector_residual
from merton_impact.impact import conjugate_search, fenchel_young_gap
from merton_impact.market_sim import SimConfig, run_paths
from merton_impact.merton import utility
from merton_impact.second_corrector import build_second_corrector, feynman_kac_check
from merton_impact.validator import convergence_study, expansion_report

pytestmark = pytest.mark.acceptance

EPS_GRID = [0.2, 0.1, 0.05, 0.025]


def test_criterion_1_corrector_ode(record_criterion):
    ok, parts = True, []
    for m in (2.5, 3.0, 4.0):
        t0 = time.perf_counter()
        c = shoot_lambda(m)
        elapsed = time.perf_counter() - t0
        res = c.max_residual()
        dw_err = abs(c.dw_ratio() / asym_coeff_dw(m) - 1.0)
        w_err = abs(c.w_ratio() / asym_coeff_w(m) - 1.0)
        sd = verify_second_derivative_bound(c)
        this = res <= 1e-8 and dw_err <= 0.005 and w_err <= 0.02 and sd.passed and elapsed <= 10.0
        ok &= this
        parts.append(f"m={m:g}: lambda={c.lambda_m:.10f} res={res:.1e} dw={dw_err:.1e} "
                     f"w={w_err:.1e} d2w_tail={sd.tail_ratio:.2f} t={elapsed:.1f}s")
    record_criterion(1, ok, "; ".join(parts))
    assert ok


def test_criterion_2_multidimensional_residual(cmd, merton, investor, record_criterion):
    rng = np.random.default_rng(20)
    t0 = time.perf_counter()
    B = cmd.box_halfwidth()
    first = first_corrector_residual(cmd, investor, rng.uniform(-B, B, (1000, 2)))
    full = 0.0
    for _ in range(100):
        t, w = rng.uniform(0.0, 0.99), rng.uniform(0.5, 2.0)
        s = rng.uniform(0.5, 2.0, 2)
        xi = (cmd.S_half_inv @ rng.uniform(-B, B, 2)) * w ** (1.0 + investor.m_star) / s
        full = max(full, full_corrector_residual(cmd, merton, investor, t, w, s, xi[None]))
    elapsed = time.perf_counter() - t0
    ok = first <= 1e-5 and full <= 1e-4 and elapsed <= 5.0
    record_criterion(2, ok, f"first={first:.1e} full_rel={full:.1e} t={elapsed:.1f}s")
    assert ok


def test_criterion_3_duality(impact, record_criterion):
    rng = np.random.default_rng(30)
    t0 = time.perf_counter()
    s = rng.uniform(0.5, 2.0, (10_000, 2))
    x = rng.normal(0.0, 1.0, (10_000, 2))
    gap = fenchel_young_gap(impact, s, x, impact.phi_grad(s, x))
    gap = float(np.max(np.abs(gap) / np.maximum(1.0, impact.phi(s, x))))
    rel = max(abs(conjugate_search(impact, s[k], x[k]) / impact.phi(s[k], x[k]) - 1.0) for k in range(20))
    elapsed = time.perf_counter() - t0
    ok = gap <= 1e-8 and rel <= 1e-4 and elapsed <= 10.0
    record_criterion(3, ok, f"fy_gap={gap:.1e} conjugate_rel={rel:.1e} t={elapsed:.1f}s")
    assert ok


def test_criterion_4_second_corrector(merton, cmd, investor, record_criterion):
    t0 = time.perf_counter()
    sc = build_second_corrector(merton, cmd.lam)
    form_gap = sc.max_form_gap()
    g_T = float(sc.bar_g(investor.T))
    fk = feynman_kac_check(0.0, 1.0, 100_000, 0, sc)
    elapsed = time.perf_counter() - t0
    ok = form_gap <= 1e-7 and g_T == 0.0 and fk.z_score <= 3.0 and elapsed <= 60.0
    record_criterion(4, ok, f"form_gap={form_gap:.1e} gbar(T)={g_T:g} mc={fk.mc_estimate:.6e} "
                            f"u={fk.analytic:.6e} z={fk.z_score:.2f} t={elapsed:.1f}s")
    assert ok


def test_criterion_5_frictionless(model, merton, investor, record_criterion):
    t0 = time.perf_counter()
    res = run_paths(SimConfig(0.0, n_paths=100_000, seed=0, batch_size=10_000), model)
    elapsed = time.perf_counter() - t0
    target = float(merton.g_fn(0.0) * utility(1.0, investor.R))
    z = abs(res.mean_utility - target) / res.std_err
    ok = z <= 3.0 and elapsed <= 60.0
    record_criterion(5, ok, f"mean={res.mean_utility:.6f} g(0)U(1)={target:.6f} se={res.std_err:.1e} "
                            f"z={z:.2f} t={elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def convergence_runs(model, merton, cmd):
    sc = build_second_corrector(merton, cmd.lam)
    base = SimConfig(EPS_GRID[0], n_paths=10_000, seed=0)
    out = []
    for _ in range(2):
        t0 = time.perf_counter()
        rep = convergence_study(EPS_GRID, base, model, sc)
        out.append((rep, time.perf_counter() - t0))
    return out


@pytest.mark.slow
def test_criterion_6_expansion_convergence(convergence_runs, record_criterion):
    rep, elapsed = convergence_runs[0]
    rows = ", ".join(f"eps={r.eps:g}: ratio={r.loss_ratio:.3f}+-{r.std_err_ratio:.3f} "
                     f"stopped={r.frac_stopped:.3f}" for r in rep.per_eps)
    ok = rep.passed and elapsed <= 900.0
    record_criterion(6, ok, f"{rows}; checks={rep.checks} t={elapsed:.0f}s")
    assert rep.checks["band"], "smallest-eps loss ratio outside [0.8, 1.2] and 3 std errors"
    assert rep.checks["trend"], "|loss_ratio - 1| increases across the grid"
    assert rep.checks["stop_fraction_decreasing"], "early-stop fraction does not decrease with eps"
    assert elapsed <= 900.0


@pytest.mark.slow
def test_criterion_7_determinism(convergence_runs, record_criterion):
    (a, _), (b, _) = convergence_runs
    ja, ca = expansion_report(a)
    jb, cb = expansion_report(b)
    ok = ja == jb and ca == cb
    record_criterion(7, ok, f"json_bytes={len(ja.encode())} identical={ja == jb} csv_identical={ca == cb}")
    assert ok
