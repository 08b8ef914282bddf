"""Batch command-line entry point.

Every run reads one JSON config, dispatches to the owning module and writes
its tables, plot series and a provenance manifest into the output directory.
Files are written atomically.  Data files depend only on the config, the
seed and the library versions, so repeated runs are byte-identical; wall
time appears only in the manifest.

Exit codes: 0 success, 2 invalid input, 3 solver non-convergence (best
iterate still written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import platform
import sys
import tempfile
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import core, queueing
from . import dyn_auction as dyn
from .auction import (
    CollocationConfig,
    ValuationModel,
    fit_loglog_slope,
    from_spec,
    revenue_perturbation_experiment,
    revenue_quadrature,
    solve_collocation,
    solve_shooting,
    spiteful_revenue,
    spiteful_revenue_mc,
)
from .errors import ConvergenceError, DomainError, NonAsymMFError

log = logging.getLogger("nonasym_mf")

OUT_ENV = "NONASYM_MF_OUT"
DEFAULT_OUT = "results"
EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 2, 3
SIG_DIGITS = 9


# ---------------------------------------------------------------------------
# schemas

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int2 = {"type": "integer", "minimum": 2}
_vec = {"type": "array", "items": _num, "minItems": 1}

_PAYOFF = {
    "type": "object",
    "required": ["family", "n"],
    "additionalProperties": False,
    "properties": {
        "family": {"enum": ["product", "sum", "symmetric_quadratic", "mean_square", "exp_mean_square"]},
        "n": {"type": "integer", "minimum": 1},
        "coefficients": {"type": "array", "items": _num, "minItems": 4, "maxItems": 4},
        "bounds": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
    },
}

_DIST = {
    "type": "object",
    "required": ["family"],
    "properties": {"family": {"enum": ["uniform", "power", "perturbed", "tabulated"]},
                   "params": {"type": "object"}},
    "additionalProperties": False,
}

_COLLOCATION = {
    "type": "object",
    "additionalProperties": False,
    "properties": {"K": {"type": "integer", "minimum": 1}, "T": {"type": "integer", "minimum": 3},
                   "tol": _pos, "max_iter": {"type": "integer", "minimum": 1}},
}

_QUEUE_BASE = {
    "n": {"type": "integer", "minimum": 1},
    "lam": {"type": "number", "minimum": 0},
    "mu": {"oneOf": [_pos, {"type": "array", "items": _pos, "minItems": 1}]},
}

_DYN_PROPS = {
    "n": _int2,
    "horizon": {"type": "integer", "minimum": 0},
    "T": {"type": "integer", "minimum": 0},
    "cdfs": {"type": "array"},
    "cost": {"type": "object", "additionalProperties": False,
             "properties": {"family": {"enum": ["linear", "affine"]}, "scale": _pos,
                            "fee": {"type": "number", "minimum": 0}}},
    "terminal": {"type": "object", "additionalProperties": False,
                 "properties": {"family": {"enum": ["zero", "linear"]}, "slope": _num}},
    "grids": {"type": "object", "additionalProperties": False,
              "properties": {"budget": _int2, "bid": _int2, "value_nodes": _int2}},
    "s_max": _pos,
    "s0": {"oneOf": [{"type": "number", "minimum": 0}, _vec]},
}

SCHEMAS = {
    "approx": {
        "type": "object",
        "required": ["payoff"],
        "additionalProperties": False,
        "properties": {
            "payoff": _PAYOFF,
            "profiles": {"type": "array", "items": _vec},
            "trajectory": {"type": "array", "items": _vec, "minItems": 1},
            "h": _pos,
            "sweep": {"type": "object", "required": ["mean", "direction", "eps"],
                      "additionalProperties": False,
                      "properties": {"mean": _num, "direction": _vec, "eps": _vec}},
        },
    },
    "games": {
        "type": "object",
        "required": ["payoff"],
        "additionalProperties": False,
        "properties": {
            "payoff": _PAYOFF,
            "nash": {"type": "array", "items": _vec},
            "strong_nash": {"type": "array", "items": _vec},
            "ess": {"type": "array", "items": _num},
            "indistinguishable": {"type": "object", "additionalProperties": False,
                                  "properties": {"samples": {"type": "integer", "minimum": 1}}},
            "grid_points": _int2,
        },
    },
    "queue": {
        "type": "object",
        "required": ["n", "lam", "mu"],
        "additionalProperties": False,
        "properties": dict(_QUEUE_BASE),
    },
    "queue-sim": {
        "type": "object",
        "required": ["n", "lam", "mu"],
        "additionalProperties": False,
        "properties": dict(_QUEUE_BASE, **{
            "horizon": _pos,
            "replications": {"type": "integer", "minimum": 1},
            "policy": {"enum": sorted(queueing.POLICIES)},
            "warmup_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "path_horizon": _pos,
            "gap": {"type": "object", "required": ["eps"], "additionalProperties": False,
                    "properties": {"eps": _vec, "horizon": _pos,
                                   "replications": {"type": "integer", "minimum": 2}}},
        }),
    },
    "auction-solve": {
        "type": "object",
        "required": ["cdfs"],
        "additionalProperties": False,
        "properties": {
            "cdfs": {"type": "array", "items": _DIST, "minItems": 2},
            "method": {"enum": ["shooting", "collocation", "both"]},
            "grid_points": {"type": "integer", "minimum": 3},
            "collocation": _COLLOCATION,
            "shooting": {"type": "object", "additionalProperties": False,
                         "properties": {"delta1": _num, "delta2": _pos}},
        },
    },
    "auction-spite": {
        "type": "object",
        "required": ["cases"],
        "additionalProperties": False,
        "properties": {
            "cases": {"type": "array", "minItems": 1, "items": {
                "type": "object", "required": ["n", "alpha"], "additionalProperties": False,
                "properties": {"n": _int2, "alpha": {"type": "number", "minimum": 0, "maximum": 1}}}},
            "samples": {"type": "integer", "minimum": 2},
        },
    },
    "auction-perturb": {
        "type": "object",
        "additionalProperties": False,
        "properties": {"eps": _vec, "collocation": _COLLOCATION},
    },
    "dyn-auction": {
        "type": "object",
        "additionalProperties": False,
        "properties": dict(_DYN_PROPS, **{
            "beliefs": {"enum": ["symmetric", "per-bidder"]},
            "stage": {"enum": ["auto", "best-response", "static"]},
            "episodes": {"type": "integer", "minimum": 2},
        }),
    },
    "dyn-perturb": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "base": {"type": "object", "additionalProperties": False, "properties": _DYN_PROPS},
            "slack": {"type": "object", "additionalProperties": False,
                      "properties": {"n": _int2, "T": {"type": "integer", "minimum": 1},
                                     "salvage": {"type": "number", "minimum": 0}}},
            "eps": _vec,
            "pattern": _vec,
            "episodes": {"type": "integer", "minimum": 2},
            "scaling": {"type": "object", "additionalProperties": False,
                        "properties": {"ns": {"type": "array", "items": _int2, "minItems": 2},
                                       "delta": _pos, "alpha": _pos}},
        },
    },
}

SUBCOMMANDS = tuple(SCHEMAS)


class ConfigError(Exception):
    pass


def load_run_config(path, subcommand: str) -> dict:
    """Parse and validate a JSON config; raises ConfigError with a located diagnostic."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: config file not found")
    text = path.read_text(encoding="utf-8")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(SCHEMAS[subcommand])
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{path}: field '{where}': {e.message}")
    return cfg


def config_hash(cfg) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# results and writers


@dataclass
class Table:
    columns: list
    rows: list

    def records(self) -> list:
        return [dict(zip(self.columns, r)) for r in self.rows]


@dataclass
class PlotSeries:
    columns: list
    data: list  # one sequence per column
    comments: list = field(default_factory=list)


@dataclass
class RunResult:
    tables: dict = field(default_factory=dict)
    plots: dict = field(default_factory=dict)
    converged: bool = True
    message: str = ""


def _plain(x):
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    return x


def format_value(x) -> str:
    x = _plain(x)
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, f".{SIG_DIGITS}g")
    if isinstance(x, list):
        return "[" + ", ".join(format_value(v) for v in x) + "]"
    return str(x)


def _csv_text(columns, rows, comments) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_value(v) for v in r])
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _provenance_lines(prov: dict) -> list:
    return [f"{k}: {prov[k]}" for k in sorted(prov)]


def write_table(path: Path, table: Table, fmt: str, prov: dict) -> Path:
    path = path.with_suffix("." + fmt)
    if fmt == "csv":
        text = _csv_text(table.columns, table.rows, _provenance_lines(prov))
    else:
        text = _json_text({"provenance": prov, "columns": table.columns, "records": table.records()})
    write_atomic(path, text)
    return path


def emit_plot_data(result, kind: str, path, provenance: dict | None = None) -> Path:
    """Write x/y series for ``result`` as a commented CSV file.

    ``kind`` is one of ``inverse_bids`` (an inverse-bid solution),
    ``perturbation`` (a table with ``eps``/``gap`` and a fitted slope),
    ``sample_path`` (a ``(times, queue_len, system_len)`` tuple) or
    ``series`` (a ready :class:`PlotSeries`).
    """
    if kind == "inverse_bids":
        cols = ["b"] + [f"v_{j + 1}" for j in range(result.n)]
        series = PlotSeries(cols, [result.b_grid, *result.curves],
                            [f"method: {result.method}", f"b_high: {format_value(result.b_high)}"])
    elif kind == "perturbation":
        series = PlotSeries(["eps", "gap"], [result.eps, result.gap],
                            ["axes: log-log", f"slope: {format_value(result.slope)}"])
    elif kind == "sample_path":
        t, q, s = result
        series = PlotSeries(["time", "queue_len", "system_len"], [t, q, s])
    elif kind == "series":
        series = result
    else:
        raise DomainError(f"unknown plot kind {kind!r}")
    comments = _provenance_lines(provenance or {}) + list(series.comments)
    rows = list(zip(*series.data))
    path = Path(path)
    if path.suffix != ".csv":
        path = path.with_name(path.name + ".csv")
    write_atomic(path, _csv_text(series.columns, rows, comments))
    return path


# ---------------------------------------------------------------------------
# subcommands


def build_payoff(spec: dict) -> core.PayoffSpec:
    n, fam = spec["n"], spec["family"]
    bounds = tuple(spec.get("bounds", (0.0, 1.0)))
    if fam == "product":
        p = core.collaborative_effort(n)
        return core.PayoffSpec(n, p.evaluate, bounds, p.analytic_reduction, p.analytic_d2, p.name)
    if fam == "symmetric_quadratic":
        if "coefficients" not in spec:
            raise DomainError("symmetric_quadratic needs 'coefficients' [c0, c1, c2, c3]")
        return core.symmetric_quadratic(n, *spec["coefficients"], bounds=bounds)
    if fam == "sum":
        return core.symmetric_quadratic(n, 0.0, 1.0, 0.0, 0.0, bounds=bounds)
    if fam == "mean_square":
        return core.symmetric_quadratic(n, 0.0, 0.0, 1.0 / n, 0.0, bounds=bounds)
    return core.PayoffSpec(n, lambda a: math.exp(float(np.mean(a * a))), bounds, name="exp_mean_square")


def run_approx(cfg, seed, threads) -> RunResult:
    p = build_payoff(cfg["payoff"])
    h = cfg.get("h")
    res = RunResult()
    cols = ["profile", "n", "mean", "epsilon", "rbar_second", "d2_own", "delta", "bound", "gap"]
    rows = []
    for a in cfg.get("profiles", []):
        r = core.error_bound_static(p, a, h)
        rows.append([list(a), r.n, r.mean, r.epsilon, r.rbar_second, r.d2_own, r.delta, r.bound, r.gap])
    res.tables["static"] = Table(cols, rows)
    if "trajectory" in cfg:
        r = core.error_bound_dynamic(p, cfg["trajectory"], h)
        res.tables["dynamic"] = Table(["horizon", "delta", "bound", "gap"],
                                      [[r.horizon, r.delta, r.bound, r.gap]])
    if "sweep" in cfg:
        sw = cfg["sweep"]
        d = np.asarray(sw["direction"], float)
        if d.size != p.n:
            raise DomainError(f"sweep direction needs {p.n} entries")
        eps, gap, bound = [], [], []
        for e in sw["eps"]:
            r = core.error_bound_static(p, sw["mean"] + e * d, h)
            eps.append(float(e))
            gap.append(r.gap)
            bound.append(r.bound)
        slope = fit_loglog_slope(eps, gap)
        res.tables["sweep"] = Table(["eps", "gap", "bound"], [list(r) for r in zip(eps, gap, bound)])
        res.plots["sweep"] = PlotSeries(["eps", "gap"], [eps, gap],
                                        ["axes: log-log", f"slope: {format_value(slope)}"])
    return res


def run_games(cfg, seed, threads) -> RunResult:
    p = build_payoff(cfg["payoff"])
    grid = cfg.get("grid_points", 101)
    rows = []
    if "indistinguishable" in cfg:
        r = core.check_indistinguishable(p, cfg["indistinguishable"].get("samples", 100), seed)
        rows.append(["indistinguishable", None, r.passed, r.max_violation, None, None])
    for a in cfg.get("nash", []):
        r = core.verify_nash(p, a, grid)
        rows.append(["nash", list(a), r.passed, r.best_improvement, r.best_player, r.best_action])
    for a in cfg.get("strong_nash", []):
        r = core.verify_strong_nash(p, a, min(grid, 11))
        player = None if r.best_player is None else list(r.best_player)
        action = None if r.best_action is None else [float(x) for x in r.best_action]
        rows.append(["strong_nash", list(a), r.passed, r.best_improvement, player, action])
    for c in cfg.get("ess", []):
        r = core.verify_ess(p, c)
        rows.append(["ess", c, r.passed, None, None, r.failing_invaders or None])
    cols = ["check", "target", "passed", "best_improvement", "player", "action"]
    return RunResult(tables={"checks": Table(cols, rows)})


def _queue_model(cfg) -> queueing.QueueModel:
    return queueing.QueueModel(cfg["n"], cfg["lam"], cfg["mu"])


def run_queue(cfg, seed, threads) -> RunResult:
    q = _queue_model(cfg)
    expected = queueing.erlang_c_metrics(q.n, q.lam, q.mbar)
    rows = [[k, expected[k]] for k in queueing.SimResult.METRICS]
    if not q.is_symmetric:
        rows.append(["mean_wait_heterogeneous_approx", queueing.waiting_time_heterogeneous(q).approximation])
    return RunResult(tables={"expected": Table(["metric", "expected"], rows)})


def run_queue_sim(cfg, seed, threads) -> RunResult:
    q = _queue_model(cfg)
    policy = cfg.get("policy", "random")
    sim = queueing.simulate_mmn(q, cfg.get("horizon", 1e5), cfg.get("replications", 20), seed,
                                policy, cfg.get("warmup_fraction", 0.1), threads)
    rows = [[r["metric"], r["expected"], r["observed"], r["ci_halfwidth"]] for r in queueing.fig1_table(q, sim)]
    res = RunResult()
    res.tables["table"] = Table(["metric", "expected", "observed", "ci_halfwidth"], rows)
    t, ql, sl = queueing.sample_path(q, cfg.get("path_horizon", 50.0), seed, policy)
    res.plots["sample_path"] = PlotSeries(["time", "queue_len", "system_len"], [t, ql, sl],
                                          ["x: time", "y: queue size"])
    if "gap" in cfg:
        g = cfg["gap"]
        c = np.linspace(-1.0, 1.0, q.n)
        eps, gap, hw = [], [], []
        for e in g["eps"]:
            qe = queueing.QueueModel(q.n, q.lam, q.mbar + e * c)
            est = queueing.simulate_heterogeneity_gap(qe, g.get("horizon", 1e6), g.get("replications", 40),
                                                      seed, threads)
            eps.append(float(e))
            gap.append(est.gap)
            hw.append(est.halfwidth)
        slope = fit_loglog_slope(eps, gap)
        res.tables["gap"] = Table(["eps", "gap", "ci_halfwidth"], [list(r) for r in zip(eps, gap, hw)])
        res.plots["gap"] = PlotSeries(["eps", "gap"], [eps, np.abs(gap)],
                                      ["axes: log-log", f"slope: {format_value(slope)}"])
    return res


def _collocation_config(spec) -> CollocationConfig:
    spec = spec or {}
    return CollocationConfig(K=spec.get("K", 8), T=spec.get("T", 40), tol=spec.get("tol", 1e-3),
                             max_iter=spec.get("max_iter", 200))


def run_auction_solve(cfg, seed, threads) -> RunResult:
    vm = ValuationModel([from_spec(c) for c in cfg["cdfs"]])
    method = cfg.get("method", "both")
    points = cfg.get("grid_points", 2001)
    sols = []
    if method in ("shooting", "both"):
        sh = cfg.get("shooting", {})
        sols.append(solve_shooting(vm, delta1=sh.get("delta1"), delta2=sh.get("delta2", 1.0),
                                   grid_points=points))
    if method in ("collocation", "both"):
        sols.append(solve_collocation(vm, _collocation_config(cfg.get("collocation")), points))
    res = RunResult()
    rows = []
    for s in sols:
        rows.append([s.method, s.b_low, s.b_high, s.residual, s.boundary_defect, s.objective,
                     s.converged, revenue_quadrature(vm, s)])
        res.plots[f"inverse_bids_{s.method}"] = s
        if not s.converged:
            res.converged = False
            res.message = f"{s.method} did not converge"
    cols = ["method", "b_low", "b_high", "residual", "boundary_defect", "objective", "converged", "revenue"]
    res.tables["summary"] = Table(cols, rows)
    if len(sols) == 2:
        b = np.linspace(sols[0].b_low, min(s.b_high for s in sols), points)
        diff = float(np.max(np.abs(sols[0].values(b) - sols[1].values(b))))
        res.tables["agreement"] = Table(["sup_norm_difference"], [[diff]])
    return res


def run_auction_spite(cfg, seed, threads) -> RunResult:
    samples = cfg.get("samples", 1_000_000)
    rows = []
    for k, case in enumerate(cfg["cases"]):
        n, a = case["n"], case["alpha"]
        exact = spiteful_revenue(n, a)
        mean, se = spiteful_revenue_mc(n, a, samples, seed + k)
        rows.append([n, a, exact, mean, se, (mean - exact) / se])
    return RunResult(tables={"revenue": Table(["n", "alpha", "formula", "mc_mean", "mc_se", "z"], rows)})


def run_auction_perturb(cfg, seed, threads) -> RunResult:
    eps = cfg.get("eps", [0.05, 0.1, 0.2, 0.4])
    try:
        tab = revenue_perturbation_experiment(eps, seed, _collocation_config(cfg.get("collocation")))
    except ConvergenceError as exc:
        sol = exc.result
        res = RunResult(converged=False, message=str(exc))
        if sol is not None:
            res.tables["failed_solve"] = Table(
                ["method", "b_high", "residual", "boundary_defect", "objective"],
                [[sol.method, sol.b_high, sol.residual, sol.boundary_defect, sol.objective]])
            res.plots["inverse_bids_failed"] = sol
        return res
    rows = [list(r) for r in zip(tab.eps, tab.revenue, tab.gap, tab.objectives)]
    res = RunResult()
    res.tables["gaps"] = Table(["eps", "revenue", "gap", "objective"], rows)
    res.tables["fit"] = Table(["baseline", "slope"], [[tab.baseline, tab.slope]])
    res.plots["gap"] = tab
    return res


def _split_dyn(cfg):
    inner = {k: v for k, v in cfg.items() if k in _DYN_PROPS}
    return dyn.load_config(inner)


def _value_rows(cfg, table):
    rows = []
    for j in range(cfg.n):
        for t in range(cfg.T + 1):
            for s, v in zip(table.budget_grid, table.V[j, t]):
                rows.append([j + 1, t, s, v])
    return rows


def run_dyn_auction(cfg, seed, threads) -> RunResult:
    dc = _split_dyn(cfg)
    log.info("value iteration: n=%d T=%d", dc.n, dc.T)
    tab = dyn.value_iteration(dc, cfg.get("beliefs", "per-bidder"), stage=cfg.get("stage", "auto"))
    res = RunResult(converged=bool(tab.converged))
    if not tab.converged:
        res.message = "value iteration did not converge"
    res.tables["values"] = Table(["bidder", "period", "budget", "value"], _value_rows(dc, tab))
    rev = dyn.expected_revenue(dc, tab) if dc.T > 0 else np.zeros(0)
    sim_rows = []
    if dc.T > 0:
        play = dyn.simulate_play(dc, tab, cfg.get("episodes", 10000), seed)
        m, hw = play.mean_revenue()
        sim_rows = [[float(rev.sum()), m, hw]]
    res.tables["revenue"] = Table(["expected", "simulated", "ci_halfwidth"], sim_rows)
    s0 = np.atleast_1d(dc.s0_vec)
    summary = [[j + 1, float(s0[j]), tab.value(j, 0, float(s0[j]))] for j in range(dc.n)]
    res.tables["summary"] = Table(["bidder", "s0", "value"], summary)
    diag = {k: v for k, v in sorted(tab.diagnostics.items()) if np.isscalar(v) or v is None}
    diag["converged"] = bool(tab.converged)
    res.tables["diagnostics"] = Table(["key", "value"], [[k, v] for k, v in diag.items()])
    vgrid = np.linspace(*dc.support, 201)
    for t in range(dc.T):
        cols, data = ["value"], [vgrid]
        for j in range(dc.n):
            cols.append(f"bid_{j + 1}")
            data.append(tab.bid(j, t, vgrid, np.full(vgrid.size, s0[j])))
        res.plots[f"policy_t{t}"] = PlotSeries(cols, data, [f"period: {t}", "budget: s0"])
    return res


def run_dyn_perturb(cfg, seed, threads) -> RunResult:
    if "base" in cfg:
        base = dyn.load_config(cfg["base"])
    else:
        sl = cfg.get("slack", {})
        base = dyn.slack_budget_config(sl.get("n", 2), sl.get("T", 2), sl.get("salvage", 0.5))
    eps = cfg.get("eps", [0.05, 0.1, 0.2, 0.4])
    log.info("revenue bound experiment: %d eps values", len(eps))
    tab = dyn.revenue_bound_experiment(base, eps, seed, cfg.get("episodes", 20000), cfg.get("pattern"))
    res = RunResult()
    rows = [list(r) for r in zip(tab.eps, tab.revenue, tab.gap, tab.sim_gap, tab.sim_halfwidth)]
    res.tables["gaps"] = Table(["eps", "revenue", "gap", "sim_gap", "sim_halfwidth"], rows)
    res.tables["fit"] = Table(["baseline", "slope", "skipped"],
                              [[tab.baseline, tab.slope, [e for e, _ in tab.skipped] or None]])
    res.plots["gap"] = tab
    if "scaling" in cfg:
        sc = cfg["scaling"]
        log.info("scaling experiment")
        out = dyn.scaling_experiment(sc.get("ns", [2, 3, 4]), sc.get("delta", 0.4), sc.get("alpha", 1.0))
        res.tables["scaling"] = Table(["n", "eps", "gap", "scaled_gap"],
                                      [[r["n"], r["eps"], r["gap"], r["scaled_gap"]] for r in out])
    return res


DISPATCH = {
    "approx": run_approx,
    "games": run_games,
    "queue": run_queue,
    "queue-sim": run_queue_sim,
    "auction-solve": run_auction_solve,
    "auction-spite": run_auction_spite,
    "auction-perturb": run_auction_perturb,
    "dyn-auction": run_dyn_auction,
    "dyn-perturb": run_dyn_perturb,
}


# ---------------------------------------------------------------------------
# driver


def versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = __version__ if pkg == "artifact" else "unknown"
    return out


def _write_all(out: Path, sub: str, result: RunResult, fmt: str, prov: dict) -> list:
    paths = []
    stem = sub.replace("-", "_")
    for name, tab in result.tables.items():
        paths.append(write_table(out / f"{stem}_{name}", tab, fmt, prov))
    for name, obj in result.plots.items():
        kind = "series" if isinstance(obj, PlotSeries) else (
            "inverse_bids" if hasattr(obj, "curves") else "perturbation")
        paths.append(emit_plot_data(obj, kind, out / f"{stem}_{name}_plot", prov))
    return paths


def run(subcommand: str, config_path, out_dir=None, seed: int = 0, fmt: str = "csv",
        threads: int = 1) -> int:
    """Execute one batch run and return its exit code."""
    start = time.perf_counter()
    out = Path(out_dir or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    try:
        cfg = load_run_config(config_path, subcommand)
    except ConfigError as exc:
        log.error("invalid config: %s", exc)
        return EXIT_INVALID
    prov = {"subcommand": subcommand, "seed": seed, "config_sha256": config_hash(cfg),
            "artifact_version": versions()["artifact"]}
    log.info("run %s (seed %d)", subcommand, seed)
    code = EXIT_OK
    try:
        result = DISPATCH[subcommand](cfg, seed, threads)
    except (DomainError, jsonschema.ValidationError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_INVALID
    except ConvergenceError as exc:
        result = RunResult(converged=False, message=str(exc))
    except NonAsymMFError as exc:
        log.error("solver failure: %s", exc)
        result = RunResult(converged=False, message=str(exc))
    if not result.converged:
        code = EXIT_NONCONVERGED
        result.tables.setdefault("status", Table(["converged", "message"], [[False, result.message]]))
        log.error("non-convergence: %s", result.message)
    paths = _write_all(out, subcommand, result, fmt, prov)
    manifest = dict(prov)
    manifest.update({
        "config": cfg,
        "format": fmt,
        "threads": threads,
        "versions": versions(),
        "exit_code": code,
        "artifacts": {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in paths},
        "wall_time_s": round(time.perf_counter() - start, 3),
    })
    write_atomic(out / f"{subcommand.replace('-', '_')}_manifest.json", _json_text(manifest))
    log.info("wrote %d artifacts to %s", len(paths) + 1, out)
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nonasym-mf", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="JSON config file")
    ap.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--format", choices=("csv", "json"), default="csv")
    ap.add_argument("--threads", type=int, default=1)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.threads < 1:
        log.error("--threads must be >= 1")
        return EXIT_INVALID
    return run(args.subcommand, args.config, args.out, args.seed, args.format, args.threads)


if __name__ == "__main__":
    sys.exit(main())
