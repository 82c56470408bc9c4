"""Command-line interface.

    propsim simulate --config run.json [--reps N] [--seed S] [--workers W] [--out DIR]
    propsim plot power --in summary.csv --out power.svg
    propsim plot zipper --in replicates.csv --out zipper.svg [--sort bias|p] [--fraction F]
    propsim scenarios list

Exit codes: 0 ok, 2 invalid config or input, 3 I/O failure, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .datagen import DEFAULT_SCHEDULE, catalog_json
from .harness import ReplicateTable, run_cross_experiment, run_long_experiment, summarize_cross, zipper_select
from .report.io import (
    SchemaError,
    read_table_csv,
    replicates_from_csv,
    replicates_to_csv,
    summary_from_csv,
    summary_to_csv,
    summary_to_json,
)
from .report.plots import power_svg, zipper_svg

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
WORKERS_ENV = "PROPSIM_WORKERS"
DEFAULT_OUT = "propsim-out"


class InputError(ValueError):
    pass


def _default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return 1
    try:
        w = int(raw)
    except ValueError:
        raise InputError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if w < 1:
        raise InputError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return w


def run_config(cfg: RunConfig, workers: int):
    if cfg.experiment == "cross":
        return run_cross_experiment(
            cfg.beta_c_grid, cfg.delta_grid, n_per_group=cfg.n_per_group, residual_var=cfg.residual_var,
            reps=cfg.reps, master_seed=cfg.master_seed, workers=workers, profile_ci=cfg.profile_ci,
        )
    return run_long_experiment(
        cfg.scenarios, schedule=cfg.schedule, horizon=cfg.horizon, n_per_group=cfg.n_per_group,
        residual_var=cfg.residual_var, intercept_var=cfg.intercept_var, reps=cfg.reps,
        master_seed=cfg.master_seed, workers=workers, include_null=cfg.include_null,
    )


def zipper_from_table(table: ReplicateTable, *, model="proportional", sort="bias", fraction=0.25,
                      truth=None, beta_c=None, delta=None, scenario=None, hypothesis=None) -> str:
    filt = {"model": model}
    for key, val in (("beta_c", beta_c), ("delta", delta), ("scenario", scenario), ("hypothesis", hypothesis)):
        if val is not None:
            filt[key] = val
    sub = table.where(**filt)
    if len(sub) == 0:
        raise InputError(f"no replicate records match {filt}")
    cells = set(zip(sub["experiment"].tolist(), sub["scenario"].tolist(), sub["hypothesis"].tolist(),
                    sub["beta_c"].tolist(), sub["delta"].tolist()))
    if len({tuple("nan" if isinstance(v, float) and math.isnan(v) else v for v in c) for c in cells}) > 1:
        raise InputError(f"input holds {len(cells)} simulation cells; select one with --beta-c/--delta or --scenario/--hypothesis")
    if truth is None:
        t = sub["truth"][0]
        truth = float(t) if math.isfinite(t) else 0.0
    rows = zipper_select(sub, truth, "standardized_bias" if sort == "bias" else "p_value", fraction)
    first = rows[0].record
    cell = f"scenario {first.scenario}, {first.hypothesis}" if first.experiment == "long" else f"beta_C={first.beta_c:g}, delta={first.delta:g}"
    return zipper_svg(rows, truth, len(sub), title=f"{model}: {cell}")


def _write(path: str, text: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.reps is not None:
        if args.reps < 1:
            raise ConfigError("--reps: must be >= 1")
        cfg.reps = args.reps
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed: must be a 64-bit unsigned integer")
        cfg.master_seed = args.seed
    workers = args.workers or cfg.workers or _default_workers()
    out = args.out or cfg.output_dir or DEFAULT_OUT
    os.makedirs(out, exist_ok=True)
    result = run_config(cfg, workers)
    meta = {"experiment": cfg.experiment, "reps": cfg.reps, "master_seed": cfg.master_seed}
    _write(os.path.join(out, "config-echo.json"), cfg.to_json())
    _write(os.path.join(out, "replicates.csv"), replicates_to_csv(result.replicates))
    _write(os.path.join(out, "summary.csv"), summary_to_csv(result.summary))
    _write(os.path.join(out, "summary.json"), summary_to_json(result.summary, meta))
    for p in cfg.plots:
        if p.kind == "power":
            svg = power_svg(result.summary)
        else:
            svg = zipper_from_table(result.replicates, model=p.model, sort=p.sort, fraction=p.fraction,
                                    beta_c=p.beta_c, delta=p.delta, scenario=p.scenario, hypothesis=p.hypothesis)
        _write(os.path.join(out, p.file), svg)
    print(f"wrote {out}/summary.json ({len(result.summary.rows)} rows, {cfg.reps} replicates per cell)")
    return EXIT_OK


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def cmd_plot(args) -> int:
    text = _read(args.inp)
    if not text.strip():
        raise InputError(f"{args.inp}: empty input")
    schema, _, _ = read_table_csv(text)
    if args.kind == "power":
        summary = summary_from_csv(text) if schema.startswith("propsim.summary") else summarize_cross(replicates_from_csv(text))
        if not summary.rows:
            raise InputError(f"{args.inp}: no rows")
        svg = power_svg(summary)
    else:
        if schema.startswith("propsim.summary"):
            raise InputError("zipper plots need a replicates CSV, not a summary")
        table = replicates_from_csv(text)
        if len(table) == 0:
            raise InputError(f"{args.inp}: no rows")
        svg = zipper_from_table(table, model=args.model, sort=args.sort, fraction=args.fraction, truth=args.truth,
                                beta_c=args.beta_c, delta=args.delta, scenario=args.scenario, hypothesis=args.hypothesis)
    _write(args.out, svg)
    return EXIT_OK


def cmd_scenarios(args) -> int:
    schedule = tuple(args.schedule) if args.schedule else DEFAULT_SCHEDULE
    sys.stdout.write(catalog_json(schedule, schedule[-1]) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="propsim", description="Proportional vs additive treatment-effect simulations.")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a simulation described by a JSON config")
    sim.add_argument("--config", required=True, help="JSON run configuration")
    sim.add_argument("--reps", type=int, help="override the replicate count")
    sim.add_argument("--seed", type=int, help="override the master seed")
    sim.add_argument("--workers", type=int, help=f"worker processes (default: config, then ${WORKERS_ENV}, then 1)")
    sim.add_argument("--out", help=f"output directory (default: config output_dir or {DEFAULT_OUT})")
    sim.set_defaults(func=cmd_simulate)

    plot = sub.add_parser("plot", help="draw a figure from simulation output")
    plot.add_argument("kind", choices=("power", "zipper"))
    plot.add_argument("--in", dest="inp", required=True, help="replicates.csv, or summary.csv for power plots")
    plot.add_argument("--out", required=True, help="output SVG path")
    plot.add_argument("--sort", choices=("bias", "p"), default="bias", help="zipper order: standardized bias or p-value")
    plot.add_argument("--fraction", type=float, default=0.25, help="share of sorted replicates to draw")
    plot.add_argument("--model", default="proportional", help="model whose replicates are drawn")
    plot.add_argument("--truth", type=float, help="reference value (default: the cell's true effect)")
    plot.add_argument("--beta-c", dest="beta_c", type=float, help="cross cell selector")
    plot.add_argument("--delta", type=float, help="cross cell selector")
    plot.add_argument("--scenario", help="long cell selector")
    plot.add_argument("--hypothesis", choices=("alt", "null"), help="long cell selector")
    plot.set_defaults(func=cmd_plot)

    sc = sub.add_parser("scenarios", help="scenario catalog")
    sc.add_argument("action", choices=("list",))
    sc.add_argument("--schedule", type=float, nargs="+", help="visit times (default 0 6 12 18)")
    sc.set_defaults(func=cmd_scenarios)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", None) is not None and args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "fraction", None) is not None and not 0 < args.fraction <= 1:
        print("error: --fraction must be in (0, 1]", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, SchemaError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
