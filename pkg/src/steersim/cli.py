"""Command-line entry point: ``steersim run | solve | classify``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import analysis, harness
from .engine import run_batch, write_traces_csv
from .stackelberg import stackelberg_threshold

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RUNTIME = 3


def _arms(text: str) -> tuple[str, ...]:
    arms = tuple(a.strip() for a in text.split(",") if a.strip())
    if not arms or any(a not in harness.ARMS for a in arms):
        raise argparse.ArgumentTypeError(f"arms must be a comma list drawn from {harness.ARMS}")
    return arms


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="steersim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate the configured arms and write CSV tables")
    run.add_argument("--config", required=True, help="JSON experiment config")
    run.add_argument("--runs", type=_positive_int)
    run.add_argument("--horizon", type=_positive_int)
    run.add_argument("--seed", type=int)
    run.add_argument("--arms", type=_arms, help="comma list, e.g. regular,se")
    run.add_argument("--out", default=".", help="output directory (default: cwd)")
    run.add_argument("--stride", type=_positive_int, help="emit every K-th round")
    run.add_argument("--workers", type=_positive_int, help="worker threads (output is identical)")
    run.add_argument("--force", action="store_true", help="overwrite existing outputs")
    run.add_argument("--traces", action="store_true", help="also write per-round traces of every run")

    solve = sub.add_parser("solve", help="print the Stackelberg solution as JSON")
    solve.add_argument("--config", required=True)

    classify = sub.add_parser("classify", help="print steerability verdicts per mechanism")
    classify.add_argument("--config", required=True)
    return parser


def _apply_overrides(config: harness.ExperimentConfig, args) -> harness.ExperimentConfig:
    changes = {}
    for key in ("runs", "horizon", "seed", "arms", "stride", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    if not changes:
        return config
    if "horizon" in changes:
        changes["checkpoints"] = tuple(c for c in config.checkpoints if c < changes["horizon"]) + (changes["horizon"],)
    if "seed" in changes and not 0 <= changes["seed"] < 2**64:
        raise harness.ConfigError("field 'seed' must be an unsigned 64-bit integer")
    return dataclasses.replace(config, **changes)


def _cmd_run(args) -> int:
    config = _apply_overrides(harness.load_config(args.config), args)
    result = harness.run_experiment(config)
    paths = harness.emit_plot_data(result, args.out, force=args.force)
    if args.traces:
        se = harness.resolve_se(config)
        for arm in config.arms:
            path = Path(args.out) / f"{config.name}_{arm}_traces.csv"
            if path.exists() and not args.force:
                raise FileExistsError(f"refusing to overwrite {path} (use --force)")
            rc = harness.run_config_for(config, arm, se)
            write_traces_csv(run_batch(rc, config.runs, config.workers), path)
            paths.append(path)
    for arm, table in result.tables.items():
        print(f"{arm}: delta(T)={table.delta_mean[-1]:.6g} +- {table.delta_std[-1]:.3g}")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def _cmd_solve(args) -> int:
    config = harness.load_config(args.config)
    se = harness.resolve_se(config)
    doc = se.to_dict()
    doc["threshold_y_B"] = stackelberg_threshold(config.params)
    doc["pinned"] = config.se_pin is not None
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_classify(args) -> int:
    config = harness.load_config(args.config)
    rows = [
        {
            "mechanism": v.mechanism,
            "regime": v.regime,
            "steerable": v.steerable,
            "condition_value": v.condition_value,
            "note": v.note,
        }
        for v in analysis.steerability_table(config.params, config.scheme)
    ]
    print(json.dumps(rows, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "solve": _cmd_solve, "classify": _cmd_classify}[args.command]
    try:
        return handler(args)
    except ValueError as exc:
        print(f"steersim: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, RuntimeError, ArithmeticError) as exc:
        print(f"steersim: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
