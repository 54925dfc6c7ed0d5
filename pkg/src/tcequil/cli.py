"""Command-line entry point.

Every subcommand reads an optional strict JSON config; command-line flags
override it. Exit codes: 0 success, 2 validation or existence failure,
3 solver failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .asymptotics import AsymptoticKit, illiquidity_discount
from .params import ModelParams, ParameterError
from .riccati import (
    DEFAULT_STEPS,
    ExistenceError,
    PicardNotConverged,
    RiccatiBlowUp,
    check_existence,
    solve_direct,
    solve_picard,
    sup_gap,
)
from .simulate import PathConfig, diagnostics_json, expected_premium, simulate
from . import tracking

OUTPUT_ENV = "TCEQUIL_OUTPUT_DIR"
EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
METHODS = ("direct", "picard", "both")
RICHARDSON_STEPS = (250, 500, 1000)


class ConfigError(ValueError):
    pass


def fmt(x) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class TrackingConfig:
    gamma: float | None = None
    lambda_cost: float | None = None
    sigma: float | None = None
    k0: float | None = None
    k1: float | None = None
    x0: float | None = None
    horizon: float | None = None

    def problem(self, params: ModelParams, n_steps: int) -> tracking.TrackingProblem:
        # unset fields follow agent 1 in the symmetric frictionless benchmark
        g = params.gamma1 + params.gamma2
        vals = dict(
            gamma=params.gamma1, lambda_cost=params.lambda_cost, sigma=params.a,
            k0=params.gamma2 * params.supply / g, k1=-params.beta / params.a,
            x0=params.x1, horizon=params.horizon,
        )
        vals.update({k: v for k, v in self.__dict__.items() if v is not None})
        return tracking.TrackingProblem.constant(
            vals["gamma"], vals["lambda_cost"], vals["sigma"], vals["k0"], vals["k1"],
            vals["x0"], horizon=vals["horizon"], n_steps=n_steps)


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams = field(default_factory=ModelParams)
    n_steps: int = DEFAULT_STEPS
    method: str = "direct"
    tol: float = 1e-10
    max_iter: int = 200
    force: bool = False
    paths: PathConfig = field(default_factory=lambda: PathConfig(n_paths=1000, record_stride=16))
    sweep_axis: str = "lambda_cost"
    sweep_values: tuple = (0.25, 0.5, 1.0, 2.0, 4.0)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    output_dir: str | None = None

    def validate(self) -> None:
        if self.n_steps < 16:
            raise ConfigError("n_steps must be at least 16")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if not (self.tol > 0 and math.isfinite(self.tol)):
            raise ConfigError("tol must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.sweep_axis != "eps" and self.sweep_axis not in {f.name for f in fields(ModelParams)}:
            raise ConfigError(f"unknown sweep axis {self.sweep_axis!r}")
        vals = self.sweep_values
        if not vals:
            raise ConfigError("sweep values must not be empty")
        if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in vals):
            raise ConfigError("sweep values must be finite numbers")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("sweep values must be strictly increasing")


_SECTIONS = {"params", "solve", "paths", "sweep", "tracking", "output_dir"}
_SOLVE_KEYS = {"n_steps", "method", "tol", "max_iter", "force"}


def _strict(section: str, data, allowed) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be a JSON object")
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(sorted(unknown))}")
    return data


def _typed(section: str, data: dict, types: dict) -> dict:
    out = {}
    for key, val in data.items():
        want = types[key]
        if want is float and isinstance(val, (int, float)) and not isinstance(val, bool):
            out[key] = float(val)
        elif want is int and isinstance(val, int) and not isinstance(val, bool):
            out[key] = val
        elif want is bool and isinstance(val, bool):
            out[key] = val
        elif want is str and isinstance(val, str):
            out[key] = val
        else:
            raise ConfigError(f"{section}.{key} must be of type {want.__name__}")
    return out


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(raw)


def config_from_dict(raw) -> RunConfig:
    raw = _strict("config", raw, _SECTIONS)
    cfg = RunConfig()
    changes = {}
    if "params" in raw:
        changes["params"] = ModelParams.from_dict(_strict("params", raw["params"],
                                                          {f.name for f in fields(ModelParams)}))
    if "solve" in raw:
        solve = _strict("solve", raw["solve"], _SOLVE_KEYS)
        changes.update(_typed("solve", solve, dict(n_steps=int, method=str, tol=float,
                                                    max_iter=int, force=bool)))
    if "paths" in raw:
        keys = {f.name for f in fields(PathConfig)}
        paths = _typed("paths", _strict("paths", raw["paths"], keys), {k: int for k in keys})
        changes["paths"] = replace(cfg.paths, **paths)
    if "sweep" in raw:
        sweep = _strict("sweep", raw["sweep"], {"axis", "values"})
        if "axis" in sweep:
            changes["sweep_axis"] = _typed("sweep", {"axis": sweep["axis"]}, {"axis": str})["axis"]
        if "values" in sweep:
            vals = sweep["values"]
            if not isinstance(vals, list):
                raise ConfigError("sweep.values must be a list")
            changes["sweep_values"] = tuple(
                _typed("sweep", {"values": v}, {"values": float})["values"] for v in vals)
    if "tracking" in raw:
        keys = {f.name for f in fields(TrackingConfig)}
        tr = _typed("tracking", _strict("tracking", raw["tracking"], keys), {k: float for k in keys})
        changes["tracking"] = TrackingConfig(**tr)
    if "output_dir" in raw:
        changes["output_dir"] = _typed("config", {"output_dir": raw["output_dir"]},
                                       {"output_dir": str})["output_dir"]
    return replace(cfg, **changes)


def _parse_assignment(text: str):
    key, sep, val = text.partition("=")
    if not sep:
        raise ConfigError(f"expected NAME=VALUE, got {text!r}")
    try:
        return key.strip(), float(val)
    except ValueError as exc:
        raise ConfigError(f"{key}: {val!r} is not a number") from exc


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    changes = {}
    if args.param:
        overrides = dict(_parse_assignment(a) for a in args.param)
        merged = cfg.params.to_dict()
        unknown = set(overrides) - set(merged)
        if unknown:
            raise ConfigError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        merged.update(overrides)
        changes["params"] = ModelParams.from_dict(merged)
    for name in ("n_steps", "method", "tol", "max_iter", "output_dir"):
        val = getattr(args, name, None)
        if val is not None:
            changes[name] = val
    if getattr(args, "force", False):
        changes["force"] = True
    path_changes = {name: getattr(args, name) for name in
                    ("n_paths", "seed", "record_stride", "workers") if getattr(args, name, None) is not None}
    if getattr(args, "path_steps", None) is not None:
        path_changes["n_steps"] = args.path_steps
    if path_changes:
        changes["paths"] = replace(cfg.paths, **path_changes)
    if getattr(args, "axis", None) is not None:
        changes["sweep_axis"] = args.axis
    if getattr(args, "values", None):
        changes["sweep_values"] = tuple(args.values)
    cfg = replace(cfg, **changes)
    cfg.validate()
    return cfg


def output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir or os.environ.get(OUTPUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _solve(cfg: RunConfig, params: ModelParams, method: str, n_steps: int | None = None):
    n = cfg.n_steps if n_steps is None else n_steps
    if method == "picard":
        return solve_picard(params, n, tol=cfg.tol, max_iter=cfg.max_iter, force=cfg.force)
    return solve_direct(params, n, force=cfg.force)


# --- commands -----------------------------------------------------------------------

def cmd_check(cfg: RunConfig, args) -> int:
    report = check_existence(cfg.params)
    _log(f"bound1 = {fmt(report.bound1)}")
    _log(f"bound2 = {fmt(report.bound2)}")
    _log(f"|gamma1 - gamma2| = {fmt(report.eps_abs)}  satisfied = {report.satisfied}")
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK if report.satisfied else EXIT_INVALID


def cmd_solve(cfg: RunConfig, args) -> int:
    out = output_dir(cfg)
    methods = ("direct", "picard") if cfg.method == "both" else (cfg.method,)
    sols = {m: _solve(cfg, cfg.params, m) for m in methods}
    primary = sols[methods[0]]
    summary = {"params": cfg.params.to_dict(), "existence": check_existence(cfg.params).to_dict()}
    for m, sol in sols.items():
        summary[m] = sol.summary()
    if cfg.method == "both":
        summary["cross_gap"] = sup_gap(sols["direct"], sols["picard"])
        _log(f"direct vs picard sup gap = {fmt(summary['cross_gap'])}")
    if args.convergence:
        study = []
        for k in range(3):
            n = cfg.n_steps // 2**k
            sol = primary if k == 0 else _solve(cfg, cfg.params, methods[0], n)
            study.append({"n_steps": n, "residual": sol.residual})
        ratios = [b["residual"] / a["residual"] for a, b in zip(study, study[1:])]
        for row, r in zip(study[1:], ratios):
            _log(f"n_steps = {row['n_steps']}: residual = {fmt(row['residual'])}, ratio = {fmt(r)}")
        summary["convergence"] = {"levels": study, "ratios": ratios}
    primary.to_csv(out / "riccati.csv")
    _write_json(out / "solve_summary.json", summary)
    _log(f"wrote {out / 'riccati.csv'} and {out / 'solve_summary.json'}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> int:
    out = output_dir(cfg)
    sol = _solve(cfg, cfg.params, "direct")
    ens = simulate(sol, cfg.params, cfg.paths)
    ens.to_csv(out / "paths.csv")
    (out / "diagnostics.json").write_text(diagnostics_json(ens, sol) + "\n")
    _log(f"terminal gap max = {fmt(ens.summary['terminal_gap_max'])}")
    _log(f"wrote {out / 'paths.csv'} and {out / 'diagnostics.json'}")
    return EXIT_OK


SWEEP_COLUMNS = ("value", "eps", "satisfied", "skipped", "discount_numeric", "discount_leading",
                 "B0", "vol_correction_sign", "premium_component_mean", "premium_mean")


def _sweep_params(base: ModelParams, axis: str, value: float) -> ModelParams:
    if axis == "eps":
        g_hat = (base.gamma1 + base.gamma2) / 2
        return base.with_(gamma1=g_hat + value / 2, gamma2=g_hat - value / 2)
    return base.with_(**{axis: value})


def sweep_rows(cfg: RunConfig):
    rows = []
    for value in cfg.sweep_values:
        p = _sweep_params(cfg.params, cfg.sweep_axis, value)
        report = check_existence(p)
        row = {"value": value, "eps": p.gamma1 - p.gamma2, "satisfied": int(report.satisfied)}
        if not (report.satisfied or cfg.force):
            row.update({k: math.nan for k in SWEEP_COLUMNS[4:]}, skipped=1)
            rows.append(row)
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            sol = solve_direct(p, cfg.n_steps, force=True)
        B = sol["B"]
        component = p.gamma2 * p.supply * p.a * B
        T = p.horizon
        vol_mean = float(np.trapezoid(B, sol.grid)) / T
        row.update(
            skipped=0,
            discount_numeric=illiquidity_discount(p, "numeric", sol),
            discount_leading=illiquidity_discount(p, "leading"),
            B0=float(B[0]),
            vol_correction_sign=int(np.sign(vol_mean)),
            premium_component_mean=float(np.trapezoid(component, sol.grid)) / T,
            premium_mean=float(np.trapezoid(expected_premium(sol, p), sol.grid)) / T,
        )
        rows.append(row)
    return rows


def cmd_sweep(cfg: RunConfig, args) -> int:
    out = output_dir(cfg)
    rows = sweep_rows(cfg)
    path = out / f"sweep_{cfg.sweep_axis}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([row[k] if isinstance(row[k], int) else fmt(row[k]) for k in SWEEP_COLUMNS])
    skipped = sum(r["skipped"] for r in rows)
    if skipped:
        _log(f"{skipped} of {len(rows)} points fail the existence bound and were skipped")
    _log(f"wrote {path}")
    return EXIT_INVALID if skipped == len(rows) else EXIT_OK


def tracking_report(cfg: RunConfig) -> dict:
    levels = []
    for n in RICHARDSON_STEPS:
        problem = cfg.tracking.problem(cfg.params, n)
        sol = tracking.solve(problem)
        dp = tracking.dp_oracle(problem)
        levels.append({"n_steps": n, "dt": problem.dt, "c0": float(sol.c[0]),
                       "kappa0": float(dp.kappa[0]), "gap": abs(float(dp.kappa[0] + sol.c[0]))})
    ratios = [a["gap"] / b["gap"] for a, b in zip(levels, levels[1:])]

    problem = cfg.tracking.problem(cfg.params, RICHARDSON_STEPS[0])
    still = replace(problem, sigma=np.zeros_like(problem.sigma))
    dp0 = tracking.dp_oracle(still)
    zero_gain = max(float(np.max(np.abs(g))) for g in (dp0.kappa, dp0.alpha, dp0.beta))

    # agent 1 at eps = 0 with the equilibrium volatility: the tracking speed is -F
    p0 = cfg.params.with_(gamma2=cfg.params.gamma1)
    n_eq = DEFAULT_STEPS
    sol_eq = solve_direct(p0, n_eq)
    eq_problem = tracking.TrackingProblem.constant(
        p0.gamma1, p0.lambda_cost, p0.a, horizon=p0.horizon, n_steps=n_eq)
    c = tracking.solve_c(eq_problem)
    return {
        "richardson": {"levels": levels, "ratios": ratios},
        "zero_sigma_max_gain": zero_gain,
        "equilibrium_consistency_gap": float(np.max(np.abs(c + sol_eq["F"]))),
    }


def cmd_tracking_verify(cfg: RunConfig, args) -> int:
    out = output_dir(cfg)
    report = tracking_report(cfg)
    for lv in report["richardson"]["levels"]:
        _log(f"n_steps = {lv['n_steps']}: |kappa_DP(0) + c(0)| = {fmt(lv['gap'])}")
    _log(f"sigma = 0 max gain = {fmt(report['zero_sigma_max_gain'])}")
    _log(f"equilibrium consistency gap = {fmt(report['equilibrium_consistency_gap'])}")
    _write_json(out / "tracking_report.json", report)
    return EXIT_OK


def cmd_asymptotics(cfg: RunConfig, args) -> int:
    out = output_dir(cfg)
    kit = AsymptoticKit(cfg.params)
    grid = np.linspace(0.0, cfg.params.horizon, args.points + 1)
    table = kit.table(grid)
    data = np.column_stack([grid] + [table[k] for k in table])
    path = out / "asymptotics.csv"
    np.savetxt(path, data, delimiter=",", header="t," + ",".join(table), comments="", fmt="%.17g")
    _log(f"wrote {path}")
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="strict JSON run configuration")
    p.add_argument("--param", action="append", metavar="NAME=VALUE",
                   help="override a model parameter (repeatable)")
    p.add_argument("--out", dest="output_dir", help=f"output directory (default ${OUTPUT_ENV} or .)")


def _solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", dest="n_steps", type=int, help="Riccati grid steps")
    p.add_argument("--force", action="store_true", help="run even when the existence bound fails")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tcequil", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="evaluate the existence bounds")
    _common(p)

    p = sub.add_parser("solve", help="solve the Riccati system")
    _common(p)
    _solver_flags(p)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--convergence", action="store_true",
                   help="also solve with the grid halved twice and log residual ratios")

    p = sub.add_parser("simulate", help="simulate equilibrium paths")
    _common(p)
    _solver_flags(p)
    p.add_argument("--paths", dest="n_paths", type=int)
    p.add_argument("--path-steps", dest="path_steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--record-stride", dest="record_stride", type=int)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("sweep", help="comparative statics over one parameter")
    _common(p)
    _solver_flags(p)
    p.add_argument("--axis", help="'eps' or a parameter name")
    p.add_argument("--values", type=float, nargs="+")

    p = sub.add_parser("tracking-verify", help="compare the tracking solution with the DP oracle")
    _common(p)

    p = sub.add_parser("asymptotics", help="closed-form coefficient table")
    _common(p)
    p.add_argument("--points", type=int, default=100)
    return parser


COMMANDS = {
    "check": cmd_check,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "tracking-verify": cmd_tracking_verify,
    "asymptotics": cmd_asymptotics,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    with warnings.catch_warnings():
        warnings.showwarning = lambda msg, *a, **k: _log(f"warning: {msg}")
        return _run(args)


def _run(args) -> int:
    try:
        cfg = apply_overrides(load_config(args.config), args)
        if args.command == "asymptotics" and args.points < 1:
            raise ConfigError("--points must be positive")
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ParameterError, ExistenceError) as exc:
        _log(f"error: {exc}")
        return EXIT_INVALID
    except (RiccatiBlowUp, PicardNotConverged, FloatingPointError, OverflowError) as exc:
        _log(f"solver failure: {exc}")
        return EXIT_SOLVER
    except OSError as exc:
        _log(f"I/O failure: {exc}")
        return EXIT_IO
    except ValueError as exc:
        _log(f"error: {exc}")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
