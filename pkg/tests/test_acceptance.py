"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` or
``python tests/test_acceptance.py``.
"""

import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from nonasym_mf import cli
from nonasym_mf.auction import (
    CollocationConfig,
    ValuationModel,
    collocation_objective,
    power,
    revenue_perturbation_experiment,
    solve_collocation,
    solve_shooting,
    spite_ode_residual,
    spiteful_revenue,
    spiteful_revenue_mc,
    spiteful_symmetric_bid,
    uniform,
)
from nonasym_mf.core import PayoffSpec, collaborative_effort, error_bound_static, symmetric_quadratic
from nonasym_mf.dyn_auction import (
    DynAuctionConfig,
    Terminal,
    expected_revenue,
    revenue_bound_experiment,
    scaling_experiment,
    simulate_play,
    slack_budget_config,
    value_iteration,
)
from nonasym_mf.queueing import (
    QueueModel,
    erlang_c_metrics,
    simulate_heterogeneity_gap,
    simulate_mmn,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
FIG1 = {"utilization": 0.830, "p_empty": 0.091, "p_wait": 0.760,
        "mean_queue_len": 3.800, "mean_system_len": 5.500}


def slope(x, y):
    return float(np.polyfit(np.log(x), np.log(np.abs(y)), 1)[0])


def test_criterion_01_quadratic_exactness(verdict):
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 9))
        p = symmetric_quadratic(n, *rng.uniform(-3, 3, 4))
        rep = error_bound_static(p, rng.uniform(-1, 1, n), h=0.5)
        worst = max(worst, abs(rep.gap - rep.bound))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and dt < 1.0
    assert verdict(1, ok, f"max |gap - bound| = {worst:.2e}, {dt:.3f} s"), (worst, dt)


def test_criterion_02_product_example(verdict):
    p = collaborative_effort(2)
    errs, ok = [], True
    for eps in (0.1, 0.01):
        rep = error_bound_static(p, [1.0, (1 - eps) ** 2])
        want = eps**4 / 4 + (1 - eps) * eps**2
        errs.append(abs(rep.gap - want))
        ok &= abs(rep.gap - want) <= 1e-12 and rep.bound <= eps**2 and rep.gap < eps**2
    assert verdict(2, ok, f"gap errors {errs[0]:.1e}, {errs[1]:.1e}; bound <= eps^2"), errs


def test_criterion_03_second_order_slope(verdict):
    eps = np.geomspace(1e-3, 1e-1, 9)
    gamma = np.array([1.0, -0.5, -0.5])
    payoffs = {
        "exp(mean of squares)": PayoffSpec(3, lambda a: math.exp(float(np.mean(a * a)))),
        "product": PayoffSpec(3, lambda a: float(np.prod(a))),
    }
    slopes = {}
    for name, p in payoffs.items():
        gaps = [error_bound_static(p, 0.5 + e * gamma).gap for e in eps]
        slopes[name] = slope(eps, gaps)
    ok = all(abs(s - 2) <= 0.1 for s in slopes.values())
    detail = ", ".join(f"{k} slope {v:.4f}" for k, v in slopes.items())
    assert verdict(3, ok, detail), slopes


def test_criterion_04_erlang_c(verdict):
    erlang_c_metrics(2, 5.0, 3.0)
    t0 = time.perf_counter()
    m = erlang_c_metrics(2, 5.0, 3.0)
    dt = time.perf_counter() - t0
    rel = {k: abs(m[k] - v) / v for k, v in FIG1.items()}
    exact = {"utilization": 0.8333, "p_empty": 0.0909, "p_wait": 0.7576,
             "mean_queue_len": 3.788, "mean_system_len": 5.455}
    ok = max(rel.values()) <= 0.01 and dt < 1e-3
    ok &= all(abs(m[k] - v) <= 5e-4 for k, v in exact.items())
    assert verdict(4, ok, f"max rel err vs rounded values {max(rel.values()):.4f}, {dt * 1e6:.0f} us"), rel


def test_criterion_05_des_oracle(verdict):
    q = QueueModel(2, 5.0, [3.0, 3.0])
    truth = erlang_c_metrics(2, 5.0, 3.0)
    t0 = time.perf_counter()
    hits = total = 0
    for seed in range(4):
        sim = simulate_mmn(q, horizon=1e5, replications=20, seed=seed)
        for k in FIG1:
            total += 1
            hits += getattr(sim, k).contains(truth[k])
    dt = time.perf_counter() - t0
    ok = hits >= 18 and total == 20 and dt < 60
    assert verdict(5, ok, f"{hits}/{total} CIs contain the closed form, {dt:.1f} s"), (hits, dt)


def test_criterion_06_heterogeneous_queue(verdict):
    eps = np.array([0.1, 0.2, 0.4])
    gaps = [simulate_heterogeneity_gap(QueueModel(2, 5.0, [3 - e, 3 + e]), horizon=1e6,
                                       replications=40, seed=0).gap for e in eps]
    s = slope(eps, gaps)
    ok = abs(s - 2) <= 0.3 and all(g > 0 for g in gaps)
    assert verdict(6, ok, f"slope {s:.3f}, gaps {', '.join(f'{g:.3e}' for g in gaps)}"), (s, gaps)


def test_criterion_07_vickrey_closed_form(verdict):
    t0 = time.perf_counter()
    vm = ValuationModel([uniform(), uniform()])
    sh = solve_shooting(vm)
    co = solve_collocation(vm)
    b = np.linspace(0, 0.5, 2001)
    err_sh = float(np.max(np.abs(sh.values(b) - 2 * b)))
    err_co = float(np.max(np.abs(co.values(b) - 2 * b)))
    x0 = np.array([0.5, -0.5, 2.0, -0.5, 2.0])
    obj = collocation_objective(vm, CollocationConfig(K=1, T=3, init="user", x0=x0), x0)
    dt = time.perf_counter() - t0
    ok = err_sh < 1e-3 and err_co < 1e-3 and obj < 1e-12 and dt < 10
    assert verdict(7, ok, f"sup errors {err_sh:.1e} / {err_co:.1e}, seed objective {obj:.1e}, "
                          f"{dt:.1f} s"), (err_sh, err_co, obj, dt)


def test_criterion_08_power_pair(verdict):
    vm = ValuationModel([power(7), power(8)])
    target = (7 / 8) ** 14 / 64
    sols = [solve_shooting(vm), solve_collocation(vm)]
    ok, parts = True, []
    for s in sols:
        gap = s.curves[1] - s.curves[0]
        inner = (s.b_grid > 0.05 * s.b_high) & (s.b_grid < s.b_high)
        top = float(gap[s.b_grid >= 0.95 * s.b_high].mean())
        ordered = bool(np.all(gap[inner] >= 0))
        ok &= s.converged and s.boundary_defect < 1e-3 and ordered and target / 2 <= top <= 2 * target
        parts.append(f"{s.method} defect {s.boundary_defect:.1e} top gap {top / target:.2f}x")
    b = np.linspace(0, min(s.b_high for s in sols), 2001)
    diff = float(np.max(np.abs(sols[0].values(b) - sols[1].values(b))))
    ok &= diff < 5e-3
    assert verdict(8, ok, "; ".join(parts) + f"; agreement {diff:.1e}"), parts


def test_criterion_09_spite(verdict):
    t0 = time.perf_counter()
    v = np.linspace(0, 1, 1001)
    res = max(float(np.max(np.abs(spite_ode_residual(n, a, v, spiteful_symmetric_bid(n, a, v)))))
              for n in (2, 3, 5) for a in (0.0, 0.5, 1.0))
    cases = {(2, 0.0): 1 / 3, (2, 1.0): 2 / 3, (3, 0.0): 1 / 2}
    z = []
    for (n, a), want in cases.items():
        mean, se = spiteful_revenue_mc(n, a, 1_000_000, seed=n)
        z.append(abs(mean - want) / se)
        assert spiteful_revenue(n, a) == pytest.approx(want, rel=1e-15)
    dt = time.perf_counter() - t0
    ok = res < 1e-12 and max(z) <= 3 and dt < 30
    assert verdict(9, ok, f"ODE residual {res:.1e}, max |z| {max(z):.2f}, {dt:.1f} s"), (res, z)


def test_criterion_10_static_revenue_perturbation(verdict):
    tab = revenue_perturbation_experiment()
    ok = abs(tab.slope - 2) <= 0.3
    assert verdict(10, ok, f"slope {tab.slope:.4f}"), tab.slope


def test_criterion_11_dynamic_auction(verdict):
    t0 = time.perf_counter()
    checks = {}

    # terminal condition
    cft = DynAuctionConfig(T=1, terminal=Terminal(slope=0.25))
    tab = value_iteration(cft, "per-bidder")
    checks["terminal exact"] = bool(np.all(tab.V[:, -1] == 0.25 * cft.budget_grid))

    # T = 1 symmetric uniform value 1/6
    cfg1 = DynAuctionConfig(T=1)
    t1 = value_iteration(cfg1, "per-bidder")
    err = abs(t1.value(0, 0, 1.0) - 1 / 6)
    checks["T=1 value 1/6"] = err <= 2 * cfg1.resolution

    # simulated revenue for T = 1 against 1/3
    play = simulate_play(cfg1, t1, episodes=100_000, seed=0)
    m, hw = play.mean_revenue()
    checks["T=1 revenue CI"] = abs(m - 1 / 3) <= hw
    checks["T=1 revenue exact route"] = abs(float(expected_revenue(cfg1, t1).sum()) - 1 / 3) < 1e-4

    bound = revenue_bound_experiment(slack_budget_config(2, 2))
    checks["revenue slope 2 +- 0.4"] = abs(bound.slope - 2) <= 0.4

    rows = scaling_experiment()
    scaled = [r["scaled_gap"] for r in rows]
    spread = max(scaled) / min(scaled)
    checks["scaling within factor 2"] = spread <= 2

    dt = time.perf_counter() - t0
    checks["runtime < 300 s"] = dt < 300
    failed = [k for k, v in checks.items() if not v]
    detail = (f"value err {err:.1e}, revenue {m:.4f} +- {hw:.4f}, slope {bound.slope:.3f}, "
              f"scaled gaps {', '.join(f'{s:.2e}' for s in scaled)} (spread {spread:.2f}), {dt:.0f} s")
    if failed:
        detail += "; failed: " + ", ".join(failed)
    assert verdict(11, not failed, detail), checks


SHIPPED = {
    "approx": "approx_product", "games": "games_product", "queue": "queue_fig1",
    "queue-sim": "queue_sim_fig1", "auction-solve": "auction_fig2", "auction-spite": "auction_spite",
    "auction-perturb": "auction_perturb", "dyn-auction": "dyn_auction_t1", "dyn-perturb": "dyn_perturb",
}


def _cli(sub, cfg, out, fmt):
    cmd = [sys.executable, "-m", "nonasym_mf.cli", sub, "--config", str(cfg), "--out", str(out),
           "--seed", "3", "--format", fmt]
    return subprocess.run(cmd, capture_output=True, text=True).returncode


def _strip_wall_time(path):
    m = json.loads(path.read_text())
    m.pop("wall_time_s")
    return m


def test_criterion_12_cli_determinism(verdict, tmp_path):
    assert set(SHIPPED) == set(cli.SUBCOMMANDS)
    mismatched, codes = [], {}
    for sub, name in SHIPPED.items():
        fmt = "json" if sub in ("approx", "dyn-perturb") else "csv"
        a, b = tmp_path / sub / "a", tmp_path / sub / "b"
        codes[sub] = (_cli(sub, CONFIGS / f"{name}.json", a, fmt), _cli(sub, CONFIGS / f"{name}.json", b, fmt))
        for p in sorted(a.iterdir()):
            q = b / p.name
            if p.name.endswith("_manifest.json"):
                same = _strip_wall_time(p) == _strip_wall_time(q)
            else:
                same = q.exists() and p.read_bytes() == q.read_bytes()
            if not same:
                mismatched.append(f"{sub}/{p.name}")
    ok = not mismatched and all(c == (0, 0) for c in codes.values())
    detail = f"{len(SHIPPED)} subcommands byte-identical" if ok else f"mismatch {mismatched} codes {codes}"
    assert verdict(12, ok, detail), (mismatched, codes)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
