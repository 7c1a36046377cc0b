"""Command-line surface: ``run``, ``bounds`` and ``presets``."""

from __future__ import annotations

import argparse
import math
from pathlib import Path

import pandas as pd

from cli import ui
from cli.charts import ChartSpec, emit_svg
from cli.experiment import run_experiment
from cli.presets import describe, preset_names, write_presets
from config.experiment_config import OVERLAYS, ConfigError, parse_config
from config.sim_config import OUTPUT_ROOT, Version
from engine.bounds import (
    BoundError,
    cvx_decay_lr_bound,
    cvx_fixed_lr_bound,
    noncvx_decay_lr_bound,
    noncvx_fixed_lr_bound,
    power_control_bound,
)
from engine.metrics import EstimationError, convergence_inputs_from_estimates, read_constants_file
from engine.utils.filesystem import atomic_write_text

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CELL_FAILURE = 2


def handle_run(args: argparse.Namespace) -> int:
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        ui.show_errors(f"Invalid config: {args.config}", exc.errors)
        return EXIT_VALIDATION
    if args.workers is not None:
        cfg.workers = args.workers
    if args.output is not None:
        cfg.output.directory = str(args.output)
    ui.header_panel(f"Experiment: {cfg.name}", f"study={cfg.study}  config sha256={cfg.digest()[:16]}")
    try:
        output = run_experiment(cfg, only_cell=args.cell)
    except KeyError as exc:
        ui.show_errors("Unknown cell", [str(exc)])
        return EXIT_VALIDATION
    ui.show_run(output)
    return EXIT_OK if output.ok else EXIT_CELL_FAILURE


def _bound_curve(name: str, inputs, rounds: int, check_eta_0: bool = True) -> list[float]:
    if name == "cvx_fixed":
        return [cvx_fixed_lr_bound(inputs, t) for t in range(rounds)]
    if name == "cvx_decay":
        return [cvx_decay_lr_bound(inputs, t, strict=check_eta_0) for t in range(rounds)]
    if name == "noncvx_fixed":
        return [noncvx_fixed_lr_bound(inputs, t + 1) for t in range(rounds)]
    if name == "noncvx_decay":
        return [math.nan] + [noncvx_decay_lr_bound(inputs, t + 1) for t in range(1, rounds)]
    return [power_control_bound(inputs, t + 1) for t in range(rounds)]


def handle_bounds(args: argparse.Namespace) -> int:
    try:
        estimates = read_constants_file(args.constants)
        inputs = convergence_inputs_from_estimates(estimates)
    except (EstimationError, BoundError, TypeError) as exc:
        ui.show_errors("Cannot build bound inputs", [str(exc)])
        return EXIT_VALIDATION

    frame = pd.DataFrame({"t": range(args.rounds)})
    problems = []
    for name in args.kind:
        try:
            frame[name] = _bound_curve(name, inputs, args.rounds, not args.skip_eta_check)
        except BoundError as exc:
            problems.append(f"{name}: {exc}")
    if problems:
        ui.show_errors("Preconditions not met", problems)
    if len(frame.columns) == 1:
        return EXIT_VALIDATION

    target = Path(args.output) if args.output else Path(args.constants).with_suffix(".bounds.csv")
    atomic_write_text(target, frame.to_csv(index=False))
    if args.svg:
        emit_svg(target, ChartSpec(x="t", y=list(frame.columns[1:]), logy=True, title="Bound curves"))
    ui.console.print(ui.frame_table(frame, f"Bounds from {Path(args.constants).name}", limit=10))
    ui.console.print(f"[dim]Written to {target}[/dim]")
    return EXIT_OK


def handle_presets(args: argparse.Namespace) -> int:
    names = args.names or preset_names()
    unknown = [n for n in names if n not in preset_names()]
    if unknown:
        ui.show_errors("Unknown presets", unknown)
        return EXIT_VALIDATION
    written = write_presets(args.directory, names)
    ui.show_presets([(n, describe(n)) for n in names])
    ui.console.print(f"[dim]{len(written)} preset files written to {args.directory}[/dim]")
    return EXIT_OK


# Command registry
COMMANDS = {
    "run": {
        "description": "Run an experiment file (all sweep cells, or one with --cell)",
        "handler": handle_run,
    },
    "bounds": {
        "description": "Evaluate bound curves from a constants file",
        "handler": handle_bounds,
    },
    "presets": {
        "description": "Write the default and acceptance experiment files",
        "handler": handle_presets,
    },
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otafl", description="Over-the-air federated learning simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {Version}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help=COMMANDS["run"]["description"])
    run.add_argument("config", help="experiment JSON file")
    run.add_argument("--cell", help="re-run a single sweep cell (id or index)")
    run.add_argument("--workers", type=int, help="client-update worker threads")
    run.add_argument("--output", type=Path, help="run directory (default: output root / name)")

    bounds = sub.add_parser("bounds", help=COMMANDS["bounds"]["description"])
    bounds.add_argument("constants", help="constants JSON written by a run")
    bounds.add_argument("--rounds", type=int, default=200)
    bounds.add_argument("--kind", nargs="+", choices=OVERLAYS, default=["noncvx_fixed"])
    bounds.add_argument("--output", help="CSV path (default: next to the constants file)")
    bounds.add_argument("--svg", action="store_true", help="also render the curves")
    bounds.add_argument(
        "--skip-eta-check", action="store_true", help="evaluate cvx_decay even when eta_0 > 1/(4 mu_c L)"
    )

    presets = sub.add_parser("presets", help=COMMANDS["presets"]["description"])
    presets.add_argument("names", nargs="*", help="subset of presets (default: all)")
    presets.add_argument("--directory", type=Path, default=OUTPUT_ROOT / "presets")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command]["handler"](args)
