"""Command-line entry point.

    otfs-rsma run --config cfg.ini [--strategies rsma,sdma] [--out DIR]
                  [--seed N] [--mode standard|mismatch]

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .harness import (
    ConfigError,
    mismatch_experiment,
    parse_config,
    run_experiment,
)
from .harness import _parse_strategies
from .qcqp import SolverError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otfs-rsma",
        description="Link-level RSMA-OTFS simulator and robust precoder optimizer",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a configured experiment sweep")
    run.add_argument("--config", required=True, help="path to the experiment config file")
    run.add_argument("--strategies", help="comma list overriding the configured strategies")
    run.add_argument("--out", help="output directory override")
    run.add_argument("--seed", type=int, help="master seed override")
    run.add_argument(
        "--mode",
        choices=("standard", "mismatch"),
        default="standard",
        help="standard sweep or idealized-vs-fractional mismatch study",
    )
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.strategies:
            cfg = replace(cfg, strategies=_parse_strategies(args.strategies))
        if args.seed is not None:
            cfg = replace(cfg, master_seed=args.seed)
        if args.out:
            cfg = replace(cfg, out_dir=args.out)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.mode == "mismatch":
            rows, _ = mismatch_experiment(cfg)
            names = ("mismatch.csv", "mismatch_agg.csv")
        else:
            rows, _ = run_experiment(cfg)
            names = ("results.csv", "results_agg.csv")
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {len(rows)} rows to {cfg.out_dir}/{names[0]} (aggregates in {names[1]})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
