"""Command-line interface: ``robsens {bounds,ci,curve,simulate,fit}``.

Settings resolve in the order command line, ``ROBSENS_*`` environment
variable, ``--config`` JSON file, built-in default. Exit codes: 0 success,
2 data error, 3 solver failure, 4 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import (SEPARATE, WHOLE, BootstrapConfig, build_replicates, default_threads, run_ci,
                        write_draws_csv)
from .bounds import BoundsProblem, SensitivityParams, point_estimate, solve_bounds
from .dataset import TransformSpec, build_designs, load_config, load_csv, write_csv
from .errors import ConfigError, RobsensError
from .logistic import fit_mle
from .simulate import SimSpec, generate
from .simultaneous import LOG_LAMBDA_MAX, prediction_curve
from .whole import WholeParams, solve_whole_bounds

SCHEMA_VERSION = "1.0"
log = logging.getLogger("robsens")

# name -> (type, default); list-valued settings take several numbers
SETTINGS = {
    "input": (str, None), "y": (str, "y"), "z": (str, "z"), "delimiter": (str, ","),
    "lambda": (list, [1.0]), "delta": (list, [0.0]),
    "lambda1": (float, None), "lambda0": (float, None), "delta1": (float, None), "delta0": (float, None),
    "alpha": (float, None), "zeta": (float, 0.025), "bootstrap": (int, 1000), "seed": (int, 0),
    "model": (str, SEPARATE), "milp": (bool, False), "xi": (float, 1.0), "lambda_gap": (float, 0.0),
    "threads": (int, None), "out": (str, None), "format": (str, "json"),
    "q_points": (int, 21), "q_min": (float, 0.0), "log_lambda_max": (float, LOG_LAMBDA_MAX),
    "n": (int, 1000), "with_hidden": (bool, False), "draws": (bool, False),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _num(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"not a number: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="robsens", description="Sensitivity bounds for the overlap-weighted treatment effect.")
    p.add_argument("--version", action="version", version=f"robsens {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True):
        sp.add_argument("--config", help="JSON file with column names, transforms and defaults")
        if data:
            sp.add_argument("--input", help="CSV with outcome, treatment and covariates")
        sp.add_argument("--out", help="output directory (stdout when omitted)")
        sp.add_argument("--format", choices=("json", "csv"))
        sp.add_argument("--seed", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")

    def sens(sp):
        sp.add_argument("--lambda", dest="lambda", type=_num, nargs="+", help="Lambda grid (both arms)")
        sp.add_argument("--delta", type=_num, nargs="+", help="delta grid (both arms)")
        sp.add_argument("--lambda1", type=_num)
        sp.add_argument("--lambda0", type=_num)
        sp.add_argument("--delta1", type=_num)
        sp.add_argument("--delta0", type=_num)
        sp.add_argument("--model", choices=(SEPARATE, WHOLE))
        sp.add_argument("--milp", action="store_true", default=None, help="exact indicators instead of the relaxation")
        sp.add_argument("--lambda-gap", dest="lambda_gap", type=_num)
        sp.add_argument("--threads", type=int)

    def boot(sp):
        sp.add_argument("--alpha", type=_num, help="tail level per side")
        sp.add_argument("--zeta", type=_num)
        sp.add_argument("--bootstrap", type=int, metavar="B")

    sp = sub.add_parser("bounds", help="estimated bounds on the original sample")
    common(sp)
    sens(sp)
    sp = sub.add_parser("ci", help="bootstrap confidence intervals for the bounds")
    common(sp)
    sens(sp)
    boot(sp)
    sp.add_argument("--draws", action="store_true", default=None, help="also write per-replicate draws")
    sp = sub.add_parser("curve", help="lower prediction bounds for quantiles of confounding strength")
    common(sp)
    sens(sp)
    boot(sp)
    sp.add_argument("--xi", type=_num)
    sp.add_argument("--q-points", dest="q_points", type=int, help="number of q values (grid resolution)")
    sp.add_argument("--q-min", dest="q_min", type=_num)
    sp.add_argument("--log-lambda-max", dest="log_lambda_max", type=_num)
    sp = sub.add_parser("simulate", help="write a synthetic confounded dataset")
    common(sp, data=False)
    sp.add_argument("--n", type=int)
    sp.add_argument("--with-hidden", dest="with_hidden", action="store_true", default=None,
                    help="include the hidden confounder column (debugging only)")
    sp = sub.add_parser("fit", help="fit the propensity model")
    common(sp)
    return p


def _coerce(name, raw):
    kind = SETTINGS[name][0]
    try:
        if kind is list:
            items = raw if isinstance(raw, list) else str(raw).replace(",", " ").split()
            return [float(v) for v in items]
        if kind is bool:
            return raw if isinstance(raw, bool) else str(raw).strip().lower() in ("1", "true", "yes", "on")
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for {name}: {raw!r}") from None


def resolve(args: argparse.Namespace, env=None) -> dict:
    """Merge command line, environment, config file and defaults."""
    env = os.environ if env is None else env
    file_cfg = load_config(args.config) if getattr(args, "config", None) else {}
    out = {}
    for name, (_, default) in SETTINGS.items():
        cli = getattr(args, name, None)
        env_val = env.get("ROBSENS_" + name.upper())
        if cli is not None:
            out[name] = _coerce(name, cli)
        elif env_val is not None:
            out[name] = _coerce(name, env_val)
        elif name in file_cfg:
            out[name] = _coerce(name, file_cfg[name])
        else:
            out[name] = default
    out["s"] = file_cfg.get("s")
    out["g"] = file_cfg.get("g")
    out["x"] = file_cfg.get("x")
    out["grid"] = file_cfg.get("grid")
    if out["threads"] is None:
        out["threads"] = default_threads()
    if out["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    if out["format"] not in ("json", "csv"):
        raise ConfigError("format must be json or csv")
    return out


def _load(cfg):
    if not cfg["input"]:
        raise ConfigError("--input is required")
    ds = load_csv(cfg["input"], y=cfg["y"], z=cfg["z"], x=cfg["x"], delimiter=cfg["delimiter"])
    s = cfg["s"] if cfg["s"] is not None else list(ds.columns)
    g = cfg["g"] if cfg["g"] is not None else s
    spec = TransformSpec.from_lists(s, g)
    return build_designs(ds, spec), spec


def sensitivity_grid(cfg) -> list:
    """Parameter objects for every grid point, row-major over (Lambda, delta)."""
    if cfg["grid"]:
        points = [(float(a), float(b)) for a, b in cfg["grid"]]
    else:
        points = list(itertools.product(cfg["lambda"], cfg["delta"]))
    if not points:
        raise ConfigError("sensitivity grid is empty")
    out = []
    for lam, dl in points:
        if cfg["model"] == WHOLE:
            if any(cfg[k] is not None for k in ("lambda1", "lambda0", "delta1", "delta0")):
                raise ConfigError("per-arm parameters apply to the separate-groups model only")
            out.append(WholeParams(lam, dl, cfg["lambda_gap"]))
        else:
            out.append(SensitivityParams(
                cfg["lambda1"] if cfg["lambda1"] is not None else lam,
                cfg["lambda0"] if cfg["lambda0"] is not None else lam,
                cfg["delta1"] if cfg["delta1"] is not None else dl,
                cfg["delta0"] if cfg["delta0"] is not None else dl,
                cfg["lambda_gap"]))
    return out


def _mode(cfg):
    return "milp" if cfg["milp"] else "relaxed"


def _report(command, cfg, results, timings, extra=None):
    rep = {"schema_version": SCHEMA_VERSION, "tool_version": __version__, "command": command,
           "config": {k: v for k, v in cfg.items()}, "seed": cfg["seed"],
           "timings": timings, "results": results}
    rep.update(extra or {})
    return rep


def _clean(obj):
    """Make a report JSON-safe: non-finite floats become strings or null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _emit(cfg, name, report, rows, header, stdout):
    report = _clean(report)
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.json").write_text(json.dumps(report, indent=2), encoding="utf-8")
        if rows is not None:
            with (out / f"{name}.csv").open("w", newline="", encoding="utf-8") as fh:
                _write_rows(fh, header, rows)
        return
    if cfg["format"] == "csv" and rows is not None:
        _write_rows(stdout, header, rows)
    else:
        stdout.write(json.dumps(report, indent=2) + "\n")


def _write_rows(fh, header, rows):
    w = csv.writer(fh)
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else v for v in _clean(list(r))])


def _param_fields(p):
    if isinstance(p, WholeParams):
        return {"lambda": p.lam, "delta": p.delta, "lambda_gap": p.lambda_gap}
    return p.to_dict()


def cmd_bounds(cfg, stdout=sys.stdout):
    t0 = time.perf_counter()
    ds, spec = _load(cfg)
    fit = fit_mle(ds)
    t_fit = time.perf_counter()
    results, rows = [], []
    for p in sensitivity_grid(cfg):
        if isinstance(p, WholeParams):
            r = solve_whole_bounds(ds, fit, p, mode=_mode(cfg))
        else:
            r = solve_bounds(BoundsProblem.from_fit(ds, fit, p), _mode(cfg))
        d = r.to_dict()
        d.get("solver_stats", {}).pop("per_cell", None)
        results.append({"params": _param_fields(p), "bounds": d})
        rows.append([*_param_fields(p).values(), r.tau_min, r.tau_max, r.status])
    timings = {"fit": t_fit - t0, "solve": time.perf_counter() - t_fit, "total": time.perf_counter() - t0}
    rep = _report("bounds", cfg, results, timings,
                  {"point_estimate": point_estimate(ds, fit), "n": ds.n, "n1": ds.n1, "n0": ds.n0,
                   "transforms": spec.to_dict()})
    header = [*_param_fields(sensitivity_grid(cfg)[0]).keys(), "tau_min", "tau_max", "status"]
    _emit(cfg, "bounds", rep, rows, header, stdout)
    return rep


def _boot_config(cfg, default_alpha):
    return BootstrapConfig(B=cfg["bootstrap"], alpha=cfg["alpha"] if cfg["alpha"] is not None else default_alpha,
                           zeta=cfg["zeta"], seed=cfg["seed"], threads=cfg["threads"], mode=cfg["model"],
                           relaxation=_mode(cfg))


def cmd_ci(cfg, stdout=sys.stdout):
    t0 = time.perf_counter()
    ds, spec = _load(cfg)
    bc = _boot_config(cfg, 0.0125)
    fit = fit_mle(ds)
    cache = build_replicates(ds, fit, bc.B, bc.seed, bc.threads)   # shared by every grid point
    t_refit = time.perf_counter()
    results, rows = [], []
    for i, p in enumerate(sensitivity_grid(cfg)):
        r = run_ci(ds, None, p, bc, cache=cache, fit=fit)
        results.append({"params": _param_fields(p), "ci": r.to_dict()})
        rows.append([*_param_fields(p).values(), r.point_bounds.tau_min, r.point_bounds.tau_max,
                     r.L_alpha, r.U_alpha, *r.delta_inflated, r.infeasible_count])
        if cfg["draws"] and cfg["out"]:
            Path(cfg["out"]).mkdir(parents=True, exist_ok=True)
            write_draws_csv(r, Path(cfg["out"]) / f"draws_{i}.csv")
    timings = {"refit": t_refit - t0, "solve": time.perf_counter() - t_refit, "total": time.perf_counter() - t0}
    rep = _report("ci", cfg, results, timings,
                  {"point_estimate": point_estimate(ds, fit), "n": ds.n, "n1": ds.n1, "n0": ds.n0,
                   "bootstrap": bc.to_dict(), "transforms": spec.to_dict()})
    first = sensitivity_grid(cfg)[0]
    infl = ["delta_inflated"] if isinstance(first, WholeParams) else ["delta1_inflated", "delta0_inflated"]
    header = [*_param_fields(first).keys(), "tau_min", "tau_max", "L_alpha", "U_alpha", *infl,
              "infeasible_count"]
    _emit(cfg, "ci", rep, rows, header, stdout)
    return rep


def cmd_curve(cfg, stdout=sys.stdout):
    t0 = time.perf_counter()
    ds, spec = _load(cfg)
    bc = _boot_config(cfg, 0.025)
    if cfg["q_points"] < 1:
        raise ConfigError("q-points must be >= 1")
    if not 0 <= cfg["q_min"] <= 1:
        raise ConfigError("q-min must lie in [0, 1]")
    q = np.linspace(cfg["q_min"], 1.0, cfg["q_points"]) if cfg["q_points"] > 1 else np.array([1.0])
    curve = prediction_curve(ds, q, bc, xi=cfg["xi"], log_lambda_max=cfg["log_lambda_max"])
    rows = list(zip(curve.q_grid, curve.lower_bounds))
    rep = _report("curve", cfg, curve.to_dict(), {"total": time.perf_counter() - t0},
                  {"bootstrap": bc.to_dict(), "transforms": spec.to_dict(), "n": ds.n})
    _emit(cfg, "curve", rep, rows, ["q", "lambda_lower"], stdout)
    return rep


def cmd_simulate(cfg, stdout=sys.stdout):
    sim = generate(SimSpec(cfg["n"], cfg["seed"]))
    extra = {"u": sim.hidden_u} if cfg["with_hidden"] else None
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_csv(sim.dataset, out / "simulated.csv", extra=extra)
    else:
        write_csv(sim.dataset, stdout, extra=extra)
    return {"n": sim.dataset.n, "n1": sim.dataset.n1, "true_effect": sim.true_effect}


def cmd_fit(cfg, stdout=sys.stdout):
    t0 = time.perf_counter()
    ds, spec = _load(cfg)
    fit = fit_mle(ds)
    results = {"coefficients": dict(zip(ds.s_labels, fit.beta.tolist())), "loglik": fit.loglik,
               "score_norm": fit.grad_norm, "iterations": fit.iterations,
               "point_estimate": point_estimate(ds, fit)}
    rep = _report("fit", cfg, results, {"total": time.perf_counter() - t0},
                  {"n": ds.n, "n1": ds.n1, "n0": ds.n0, "transforms": spec.to_dict()})
    rows = [[k, v] for k, v in results["coefficients"].items()]
    _emit(cfg, "fit", rep, rows, ["term", "coefficient"], stdout)
    return rep


COMMANDS = {"bounds": cmd_bounds, "ci": cmd_ci, "curve": cmd_curve, "simulate": cmd_simulate, "fit": cmd_fit}


def main(argv=None, stdout=None, stderr=None, env=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve(args, env)
        COMMANDS[args.command](cfg, stdout)
    except RobsensError as exc:
        stderr.write(f"robsens: error: {exc}\n")
        return exc.exit_code
    except OSError as exc:
        stderr.write(f"robsens: error: {exc}\n")
        return 2
    return 0


def schema() -> dict:
    """The JSON schema that every report validates against."""
    text = resources.files("robsens").joinpath("schema/report.v1.json").read_text(encoding="utf-8")
    return json.loads(text)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
