"""``momentum-lab`` command-line interface.

Exit codes: 0 success, 1 check failure, 2 instability, 64 usage error.
Configuration comes from built-in defaults, then ``--config`` JSON, then
explicit flags.  Every output starts with a provenance record.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .core import InvalidArgument, MomentumParams, QuadraticProblem, Spectrum, make_rng, random_spd_problem
from .dynamics import BetaToOne, BetaToZero, Constant, SwitchConfig, schedule_from_dict, schedule_to_dict
from .rate import (NoOptimumError, beta_grid, global_rate, optimal_alpha, optimal_params,
                   shb_no_tradeoff_interval, stability_max_alpha, verify_nu_monotonicity)
from .sim import (parse_stages, run_asymptotic, run_constant_and_drop, run_deterministic,
                  run_stochastic)
from .stationary import (ERROR_MAP_HEADER, UnstableSystemError, approx_error_map, error_cell,
                         first_order_residual_main_text, stationary_report)

EXIT_OK, EXIT_CHECK, EXIT_UNSTABLE, EXIT_USAGE = 0, 1, 2, 64
THREADS_ENV = "MOMENTUM_LAB_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- formatting ----------------------------------------------------------------


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    return f"{x:.9g}"


def _json_ready(obj):
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_ready(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
        return float(f"{x:.9g}")
    return obj


class Output:
    """Collects a provenance header plus either a JSON record or CSV rows."""

    def __init__(self, command: str, config: dict):
        self.provenance = {"tool": "momentum-lab", "version": __version__, "command": command,
                           "config": {k: v for k, v in sorted(config.items())
                                      if k not in ("threads", "output", "config")}}
        self.path = config.get("output")

    def _emit(self, text: str):
        if self.path:
            Path(self.path).write_text(text)
        else:
            sys.stdout.write(text)

    def json(self, record: dict):
        rec = dict(record)
        rec["provenance"] = self.provenance
        self._emit(json.dumps(_json_ready(rec), indent=2) + "\n")

    def csv(self, header, rows, notes: dict | None = None):
        buf = io.StringIO()
        buf.write("# " + json.dumps(_json_ready(self.provenance), sort_keys=True) + "\n")
        if notes:
            buf.write("# result " + json.dumps(_json_ready(notes), sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
        self._emit(buf.getvalue())


# -- option registry -------------------------------------------------------------


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _vector(text):
    return None if text is None else np.array(_floats(text), dtype=float)


class Registry:
    """Adds options whose defaults live in a dict so ``--config`` can sit between them and flags."""

    def __init__(self, parser: argparse.ArgumentParser):
        self.parser = parser
        self.defaults = {}

    def add(self, flag: str, default=None, **kw):
        dest = kw.pop("dest", flag.lstrip("-").replace("-", "_"))
        self.defaults[dest] = default
        self.parser.add_argument(flag, dest=dest, default=argparse.SUPPRESS, **kw)

    def flag(self, flag: str, help: str = ""):
        dest = flag.lstrip("-").replace("-", "_")
        self.defaults[dest] = False
        self.parser.add_argument(flag, dest=dest, action="store_true", default=argparse.SUPPRESS, help=help)


def _common(reg: Registry, fmt_default: str):
    reg.add("--config", None, help="JSON file with option values (flags override)")
    reg.add("--output", None, help="write to this file instead of stdout")
    reg.add("--format", fmt_default, choices=("csv", "json"))
    reg.add("--seed", 0, type=int)
    reg.add("--threads", None, type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")


def _params_opts(reg: Registry, alpha=None, beta=None, nu=None):
    reg.add("--alpha", alpha, type=float)
    reg.add("--beta", beta, type=float)
    reg.add("--nu", nu, type=float)


def _problem_opts(reg: Registry):
    reg.add("--problem", None, help="problem JSON file (default: generated)")
    reg.add("--dim", 2, type=int)
    reg.add("--mu", 0.1, type=float)
    reg.add("--L", 10.0, type=float, dest="L")
    reg.add("--noise-scale", 0.3, type=float)
    reg.add("--problem-seed", 0, type=int)


def build_parser():
    p = _Parser(prog="momentum-lab", description="QHM rate, stability and stationary-distribution toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    registries = {}

    r = Registry(sub.add_parser("rate", help="local rates at mu and L"))
    _common(r, "json")
    _params_opts(r)
    r.add("--mu", 1.0, type=float)
    r.add("--L", None, type=float, dest="L")
    registries["rate"] = r

    r = Registry(sub.add_parser("stability", help="largest stable step size"))
    _common(r, "json")
    r.add("--beta", None, type=float)
    r.add("--nu", None, type=float)
    r.add("--mu", 1.0, type=float)
    r.add("--L", None, type=float, dest="L")
    r.flag("--no-tradeoff", help="also report the heavy-ball interval with rate sqrt(beta)")
    registries["stability"] = r

    r = Registry(sub.add_parser("optimal", help="rate-optimal parameters"))
    _common(r, None)
    r.add("--nu", None, type=float)
    r.add("--beta", None, type=float, help="only solve for alpha at this beta")
    r.add("--kappa", None, type=float)
    r.add("--sweep-nu", None, type=int, help="number of nu grid points in [0, 1]")
    r.add("--beta-grid", 1000, type=int)
    r.add("--stride", 10, type=int)
    r.add("--tol", 1e-3, type=float, help="strided monotonicity tolerance")
    r.flag("--check-monotone", help="with --sweep-nu: exit 1 if the strided check fails")
    r.flag("--no-refine", help="plain grid minimum over beta")
    registries["optimal"] = r

    r = Registry(sub.add_parser("stationary", help="exact stationary covariance and predictions"))
    _common(r, "csv")
    _params_opts(r)
    _problem_opts(r)
    r.flag("--error-map", help="relative error grid of the second-order prediction")
    r.add("--alphas", "0.05,0.1,0.2")
    r.add("--beta-grid", 20, type=int)
    r.add("--nu-grid", 20, type=int)
    r.add("--threshold", 0.2, type=float)
    registries["stationary"] = r

    sim = sub.add_parser("simulate", help="trajectory experiments")
    simsub = sim.add_subparsers(dest="mode", parser_class=_Parser)

    r = Registry(simsub.add_parser("det", help="noiseless run and fitted rate"))
    _common(r, "csv")
    _params_opts(r)
    _problem_opts(r)
    r.add("--steps", 2000, type=int)
    r.add("--x0", None, help="comma separated start (default optimum + ones)")
    r.add("--thin", 1, type=int)
    registries["simulate det"] = r

    r = Registry(simsub.add_parser("stoch", help="noisy run and stationary statistics"))
    _common(r, "json")
    _params_opts(r)
    _problem_opts(r)
    r.add("--steps", 100000, type=int)
    r.add("--burn-in", None, type=int)
    r.add("--x0", None, help="comma separated start (default optimum)")
    registries["simulate stoch"] = r

    r = Registry(simsub.add_parser("asym", help="decaying schedule, running-min gradient norm"))
    _common(r, "csv")
    _problem_opts(r)
    r.add("--schedule", None, help="schedule JSON object or file")
    r.add("--variant", "beta_to_one", choices=("beta_to_zero", "beta_to_one"))
    r.add("--omega", 0.9, type=float)
    r.add("--c", 0.6, type=float)
    r.add("--nu-policy", "equal_to_beta", choices=("equal_to_beta", "one"))
    r.add("--beta0", 0.5, type=float)
    r.add("--beta-decay", 0.99, type=float)
    r.add("--alpha0", 1.0, type=float)
    r.add("--nu", 1.0, type=float)
    r.add("--regime", None, choices=("vanishing_momentum", "persistent_momentum"))
    r.add("--noise", "gaussian", choices=("gaussian", "truncated"))
    r.add("--bound", None, type=float)
    r.add("--rho", None, type=float, help="momentum switch threshold (unnormalized switched update)")
    r.add("--steps", 100000, type=int)
    r.add("--x0", None)
    r.add("--thin", 100, type=int)
    registries["simulate asym"] = r

    r = Registry(simsub.add_parser("drop", help="constant-and-drop stages"))
    _common(r, "csv")
    _problem_opts(r)
    r.add("--stages", "0.5:10000,0.05:10000", help="alpha:steps,alpha:steps,...")
    r.add("--beta", 0.9, type=float)
    r.add("--nu", 1.0, type=float)
    r.add("--x0", None)
    registries["simulate drop"] = r

    r = Registry(simsub.add_parser("sweep", help="(alpha, beta, nu) grid of stochastic runs"))
    _common(r, "csv")
    _problem_opts(r)
    r.add("--grid", "30x30x30")
    r.add("--alpha-range", "0.01,1.5")
    r.add("--beta-range", "0,0.999")
    r.add("--nu-range", "0,1")
    r.add("--steps", 1000, type=int)
    r.add("--burn-in", None, type=int)
    r.flag("--start-at-optimum")
    registries["simulate sweep"] = r

    r = Registry(sub.add_parser("verify", help="run the self-check suite"))
    _common(r, "csv")
    r.add("--only", None)
    r.add("--inject-fault", None, choices=("c2-sign",))
    registries["verify"] = r
    return p, registries


def resolve(ns: argparse.Namespace, reg: Registry) -> dict:
    cfg = dict(reg.defaults)
    given = {k: v for k, v in vars(ns).items() if k not in ("command", "mode")}
    path = given.get("config")
    if path:
        try:
            loaded = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config must be a JSON object")
        loaded = {k.replace("-", "_"): v for k, v in loaded.items()}
        unknown = sorted(set(loaded) - set(reg.defaults) - {"config"})
        if unknown:
            raise UsageError(f"unknown config keys: {unknown}")
        cfg.update(loaded)
    cfg.update(given)
    return cfg


def _need(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _threads(cfg) -> int:
    t = cfg.get("threads")
    if t is None:
        env = os.environ.get(THREADS_ENV)
        try:
            t = int(env) if env else 1
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer") from None
    if t < 1:
        raise UsageError("threads must be >= 1")
    return t


def _ordered_map(cfg, fn, items):
    t = _threads(cfg)
    if t == 1:
        return list(map(fn, items))
    with ThreadPoolExecutor(max_workers=t) as ex:
        return list(ex.map(fn, items))


def _params(cfg) -> MomentumParams:
    _need(cfg, "alpha", "beta", "nu")
    return MomentumParams(cfg["alpha"], cfg["beta"], cfg["nu"])


def _problem(cfg) -> QuadraticProblem:
    if cfg.get("problem"):
        try:
            return QuadraticProblem.from_json(Path(cfg["problem"]))
        except OSError as exc:
            raise UsageError(f"cannot read problem: {exc}") from None
    return random_spd_problem(cfg["dim"], Spectrum(cfg["mu"], cfg["L"]), cfg["noise_scale"], cfg["problem_seed"])


def _start(cfg, problem, default_offset: float) -> np.ndarray:
    x0 = _vector(cfg.get("x0"))
    if x0 is None:
        return problem.optimum + default_offset
    if x0.shape != (problem.dim,):
        raise UsageError(f"--x0 needs {problem.dim} values")
    return x0


# -- commands --------------------------------------------------------------------


def cmd_rate(cfg) -> int:
    p = _params(cfg)
    _need(cfg, "L")
    rep = global_rate(p, Spectrum(cfg["mu"], cfg["L"]))
    Output("rate", cfg).json(rep.as_dict(p))
    return EXIT_OK if rep.stable else EXIT_UNSTABLE


def cmd_stability(cfg) -> int:
    _need(cfg, "beta", "nu", "L")
    rec = {"beta": cfg["beta"], "nu": cfg["nu"], "L": cfg["L"],
           "alpha_max": stability_max_alpha(cfg["beta"], cfg["nu"], cfg["L"])}
    if cfg["no_tradeoff"]:
        iv = shb_no_tradeoff_interval(cfg["beta"], Spectrum(cfg["mu"], cfg["L"]))
        rec["mu"] = cfg["mu"]
        rec["no_tradeoff_interval"] = list(iv) if iv else None
    Output("stability", cfg).json(rec)
    return EXIT_OK


def cmd_optimal(cfg) -> int:
    _need(cfg, "kappa")
    kappa, refine = cfg["kappa"], not cfg["no_refine"]
    out = Output("optimal", cfg)
    if cfg["sweep_nu"] is not None:
        n = cfg["sweep_nu"]
        if n < 2:
            raise UsageError("--sweep-nu needs at least 2 points")
        nus = np.linspace(0.0, 1.0, n)
        res = _ordered_map(cfg, lambda v: optimal_params(v, kappa, cfg["beta_grid"], refine=refine), nus)
        rates = np.array([r.rate for r in res])
        stride = cfg["stride"]
        worst = float(np.max(rates[stride:] - rates[:-stride])) if n > stride else 0.0
        passed = worst < cfg["tol"]
        notes = {"strided_check": {"stride": stride, "tol": cfg["tol"], "worst_increase": max(worst, 0.0),
                                   "passed": passed}}
        rows = [(r.nu, r.alpha, r.beta, r.rate) for r in res]
        if cfg["format"] == "json":
            out.json({"kappa": kappa, "rows": [dict(zip(("nu", "alpha", "beta", "rate"), r)) for r in rows], **notes})
        else:
            out.csv(("nu", "alpha", "beta", "rate"), rows, notes)
        return EXIT_CHECK if cfg["check_monotone"] and not passed else EXIT_OK
    _need(cfg, "nu")
    if cfg["beta"] is not None:
        spec = Spectrum(1.0, kappa)
        a = optimal_alpha(cfg["beta"], cfg["nu"], spec)
        rep = global_rate(MomentumParams(a, cfg["beta"], cfg["nu"]), spec)
        rec = {"nu": cfg["nu"], "kappa": kappa, "alpha": a, "beta": cfg["beta"], "rate": rep.rate}
    else:
        r = optimal_params(cfg["nu"], kappa, cfg["beta_grid"], refine=refine)
        rec = {"nu": r.nu, "kappa": kappa, "alpha": r.alpha, "beta": r.beta, "rate": r.rate,
               "beta_grid_step": float(beta_grid(cfg["beta_grid"])[1]) if cfg["beta_grid"] > 1 else None}
    if cfg["format"] == "csv":
        out.csv(tuple(rec), [tuple(rec.values())])
    else:
        out.json(rec)
    return EXIT_OK


def _error_rows(cells):
    return [(c.alpha, c.beta, c.nu, c.tr_exact, c.tr_pred1, c.tr_pred2, c.rel_err, c.stable) for c in cells]


def cmd_stationary(cfg) -> int:
    problem = _problem(cfg)
    out = Output("stationary", cfg)
    if cfg["error_map"]:
        alphas = _floats(cfg["alphas"])
        t = _threads(cfg)
        if t == 1:
            cells = approx_error_map(alphas, cfg["beta_grid"], cfg["nu_grid"], problem, cfg["threshold"])
        else:
            with ThreadPoolExecutor(max_workers=t) as ex:
                cells = approx_error_map(alphas, cfg["beta_grid"], cfg["nu_grid"], problem, cfg["threshold"],
                                         mapper=ex.map)
        notes = {"cells": len(cells), "exceeding": sum(c.exceeds(cfg["threshold"]) for c in cells),
                 "unstable": sum(not c.stable for c in cells), "degenerate": sum(c.degenerate for c in cells)}
        if cfg["format"] == "json":
            out.json({**notes, "cells": [dict(zip(ERROR_MAP_HEADER, r)) for r in _error_rows(cells)]})
        else:
            out.csv(ERROR_MAP_HEADER, _error_rows(cells), notes)
        return EXIT_OK
    p = _params(cfg)
    cell = error_cell(p.alpha, p.beta, p.nu, problem)
    if not cell.stable:
        out.csv(ERROR_MAP_HEADER, _error_rows([cell])) if cfg["format"] == "csv" else out.json(
            {**p.as_dict(), "stable": False})
        return EXIT_UNSTABLE
    if cfg["format"] == "json":
        rep = stationary_report(p, problem)
        out.json({**p.as_dict(), "stable": True, "tr_exact": rep.tr_a_sigma_x,
                  "tr_pred1": cell.tr_pred1, "tr_pred2": cell.tr_pred2, "rel_err": cell.rel_err,
                  "lyapunov_residual": rep.residual,
                  "first_order_residual": rep.predictions["first_order_matrix_residual"],
                  "first_order_residual_alpha_a_sigma": first_order_residual_main_text(p, problem, rep),
                  "sigma_x": rep.sigma_x, "sigma_d": rep.sigma_d, "sigma_dx": rep.sigma_dx,
                  "sigma_z": rep.sigma_z})
    else:
        out.csv(ERROR_MAP_HEADER, _error_rows([cell]))
    return EXIT_OK


def _trajectory_rows(stats, thin):
    thin = max(1, int(thin))
    idx = np.arange(0, len(stats.distances), thin)
    if idx[-1] != len(stats.distances) - 1:
        idx = np.append(idx, len(stats.distances) - 1)
    return [(int(k), stats.distances[k], stats.losses[k], stats.grad_norms[k]) for k in idx]


def cmd_sim_det(cfg) -> int:
    problem = _problem(cfg)
    p = _params(cfg)
    x0 = _start(cfg, problem, 1.0)
    stats = run_deterministic(problem, p, x0, cfg["steps"])
    rep = global_rate(p, problem.spectrum)
    summary = {"measured_rate": stats.measured_rate, "theory_rate": rep.rate, "stable": rep.stable,
               "diverged": stats.diverged, "divergence_step": stats.divergence_step, "warnings": stats.warnings}
    out = Output("simulate det", cfg)
    if cfg["format"] == "json":
        out.json(summary)
    else:
        out.csv(("step", "distance", "loss", "grad_norm"), _trajectory_rows(stats, cfg["thin"]), summary)
    return EXIT_UNSTABLE if stats.diverged or not rep.stable else EXIT_OK


def cmd_sim_stoch(cfg) -> int:
    problem = _problem(cfg)
    p = _params(cfg)
    x0 = _start(cfg, problem, 0.0)
    stats = run_stochastic(problem, p, x0, cfg["steps"], cfg["burn_in"], cfg["seed"])
    rec = {**p.as_dict(), "iterates_kept": stats.iterates_kept, "mean_loss_window": stats.mean_loss_window,
           "tr_emp": stats.tr_a_cov, "empirical_cov": stats.empirical_cov, "grad_norm_min": stats.grad_norm_min,
           "diverged": stats.diverged, "divergence_step": stats.divergence_step, "warnings": stats.warnings}
    try:
        rec["tr_exact"] = stationary_report(p, problem).tr_a_sigma_x
    except UnstableSystemError:
        rec["tr_exact"] = None
    out = Output("simulate stoch", cfg)
    if cfg["format"] == "csv":
        keys = ("alpha", "beta", "nu", "iterates_kept", "mean_loss_window", "tr_emp", "tr_exact", "diverged")
        out.csv(keys, [tuple(rec[k] for k in keys)])
    else:
        out.json(rec)
    return EXIT_UNSTABLE if stats.diverged else EXIT_OK


def _schedule(cfg):
    if cfg.get("schedule"):
        text = cfg["schedule"]
        if isinstance(text, dict):
            return schedule_from_dict(text)
        if not str(text).lstrip().startswith("{"):
            text = Path(text).read_text()
        return schedule_from_dict(json.loads(text))
    if cfg["variant"] == "beta_to_zero":
        return BetaToZero(cfg["omega"], cfg["beta0"], cfg["beta_decay"], cfg["alpha0"], cfg["nu"])
    return BetaToOne(cfg["omega"], cfg["c"], cfg["nu_policy"])


def cmd_sim_asym(cfg) -> int:
    problem = _problem(cfg)
    sched = _schedule(cfg)
    x0 = _start(cfg, problem, 1.0)
    switch = SwitchConfig(True, cfg["rho"]) if cfg["rho"] is not None else None
    res = run_asymptotic(problem, sched, x0, cfg["steps"], cfg["seed"], cfg["noise"], cfg["bound"],
                         cfg["regime"], switch)
    summary = {"schedule": schedule_to_dict(sched), "regime": res.regime,
               "conditions_satisfied": res.conditions.satisfied, "violated": res.conditions.violated,
               "initial_grad_norm": res.initial_grad_norm, "final_grad_norm_min": res.final_grad_norm_min,
               "reduction": res.reduction, "warnings": res.warnings}
    out = Output("simulate asym", cfg)
    if cfg["format"] == "json":
        out.json(summary)
    else:
        thin = max(1, cfg["thin"])
        idx = list(range(0, len(res.grad_norm_min_curve), thin))
        if idx[-1] != len(res.grad_norm_min_curve) - 1:
            idx.append(len(res.grad_norm_min_curve) - 1)
        out.csv(("step", "grad_norm_min"), [(k, res.grad_norm_min_curve[k]) for k in idx], summary)
    return EXIT_UNSTABLE if res.stats.diverged else EXIT_OK


def cmd_sim_drop(cfg) -> int:
    problem = _problem(cfg)
    stages = parse_stages(cfg["stages"], cfg["beta"], cfg["nu"])
    x0 = _start(cfg, problem, 1.0)
    try:
        results = run_constant_and_drop(problem, stages, x0, cfg["seed"])
    except InvalidArgument as exc:
        if "unstable" in str(exc):
            print(f"momentum-lab: {exc}", file=sys.stderr)
            return EXIT_UNSTABLE
        raise
    header = ("stage", "alpha", "beta", "nu", "steps", "mean_loss", "deterministic_rate", "theory_rate")
    rows = [(i, r.params.alpha, r.params.beta, r.params.nu, r.steps, r.stats.mean_loss_window,
             r.deterministic_rate, global_rate(r.params, problem.spectrum).rate) for i, r in enumerate(results)]
    out = Output("simulate drop", cfg)
    if cfg["format"] == "json":
        out.json({"stages": [dict(zip(header, r)) for r in rows]})
    else:
        out.csv(header, rows)
    return EXIT_OK


def _grid_axis(text, count):
    lo, hi = _floats(text)
    return np.linspace(lo, hi, count)


def cmd_sim_sweep(cfg) -> int:
    problem = _problem(cfg)
    try:
        na, nb, nn = (int(v) for v in str(cfg["grid"]).lower().split("x"))
    except ValueError:
        raise UsageError("--grid must look like 30x30x30") from None
    alphas = _grid_axis(cfg["alpha_range"], na)
    betas = _grid_axis(cfg["beta_range"], nb)
    nus = _grid_axis(cfg["nu_range"], nn)
    steps = cfg["steps"]
    start_opt = cfg["start_at_optimum"]
    burn = cfg["burn_in"] if cfg["burn_in"] is not None else (0 if start_opt else steps // 2)
    x0 = problem.optimum.copy() if start_opt else problem.optimum + 1.0
    spec = problem.spectrum
    seed = cfg["seed"]
    cells = [(i, float(a), float(b), float(n)) for i, (a, b, n) in
             enumerate((a, b, n) for a in alphas for b in betas for n in nus)]

    def one(job):
        i, a, b, n = job
        if not (0.0 <= b < 1.0 and 0.0 <= n <= 1.0 and a > 0):
            raise UsageError(f"grid cell ({a}, {b}, {n}) is not admissible")
        p = MomentumParams(a, b, n)
        cell = error_cell(a, b, n, problem)
        if not cell.stable or not global_rate(p, spec).stable:
            return (a, b, n, None, None, None, None, False, None)
        stats = run_stochastic(problem, p, x0, steps, burn, rng=make_rng(seed, i))
        emp = None if stats.diverged else stats.mean_loss_window
        return (a, b, n, cell.tr_exact, cell.tr_pred1, cell.tr_pred2, cell.rel_err, True, emp)

    rows = _ordered_map(cfg, one, cells)
    header = ERROR_MAP_HEADER + ("mean_loss_emp",)
    out = Output("simulate sweep", cfg)
    if cfg["format"] == "json":
        out.json({"cells": [dict(zip(header, r)) for r in rows]})
    else:
        out.csv(header, rows)
    return EXIT_OK


def cmd_verify(cfg) -> int:
    from .checks import GROUPS, run_checks
    if cfg["only"] is not None and cfg["only"] not in GROUPS:
        raise UsageError(f"unknown group {cfg['only']!r}; choose from {sorted(GROUPS)}")
    results = run_checks(cfg["only"], cfg["inject_fault"])
    ok = all(r.passed for r in results)
    out = Output("verify", cfg)
    if cfg["format"] == "json":
        out.json({"passed": ok, "checks": [r.__dict__ for r in results]})
    else:
        out.csv(("group", "check", "status", "detail"),
                [(r.group, r.name, "PASS" if r.passed else "FAIL", r.detail) for r in results])
    return EXIT_OK if ok else EXIT_CHECK


COMMANDS = {
    "rate": cmd_rate, "stability": cmd_stability, "optimal": cmd_optimal, "stationary": cmd_stationary,
    "simulate det": cmd_sim_det, "simulate stoch": cmd_sim_stoch, "simulate asym": cmd_sim_asym,
    "simulate drop": cmd_sim_drop, "simulate sweep": cmd_sim_sweep, "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser, registries = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    key = ns.command
    if key is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if key == "simulate":
        if getattr(ns, "mode", None) is None:
            print("momentum-lab simulate: choose det, stoch, asym, drop or sweep", file=sys.stderr)
            return EXIT_USAGE
        key = f"simulate {ns.mode}"
    try:
        cfg = resolve(ns, registries[key])
        if cfg.get("format") is None:
            cfg["format"] = "csv" if cfg.get("sweep_nu") is not None else "json"
        return COMMANDS[key](cfg)
    except (UsageError, InvalidArgument, NoOptimumError) as exc:
        print(f"momentum-lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnstableSystemError as exc:
        print(f"momentum-lab: unstable: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE


if __name__ == "__main__":
    sys.exit(main())
