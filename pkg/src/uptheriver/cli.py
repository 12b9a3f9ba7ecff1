"""Command-line entry point.

    uptheriver <command> [--config FILE] [--K n[,n...]] [--replicates n]
               [--seed n] [--jobs n] [--check] [--output-dir DIR] ...

Exit codes: 0 pass, 1 check failure, 2 usage error, 3 numerical/solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .errors import QuadratureError, SolverError
from .harness import EXPERIMENTS, RunConfig, UsageError, run_command


def _parse_k(text: str):
    parts = [p for p in text.split(",") if p]
    vals = [int(p) for p in parts]
    return vals[0] if len(vals) == 1 else vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uptheriver",
        description="Drifted-Brownian particle experiments and the moving-boundary solver",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON or TOML config file")
        p.add_argument("--K", type=_parse_k, help="particle count (or comma list)")
        p.add_argument("--replicates", type=int)
        p.add_argument("--seed", type=int, help="seed base; replicate r uses seed+r")
        p.add_argument("--jobs", type=int, help="worker processes for replicates")
        p.add_argument("--check", action="store_true",
                       help="exit nonzero when the acceptance window fails")
        p.add_argument("--output-dir")
        p.add_argument("--t-end", type=float)
        p.add_argument("--strategy")
        p.add_argument("--h", type=float, help="step size (default 0.1/K)")
        p.add_argument("--dt", type=float, help="boundary-solver grid step")
        p.add_argument("--t-max", type=float, help="boundary-solver horizon")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {
        "experiment": args.command,
        "K": args.K,
        "replicates": args.replicates,
        "seed_base": args.seed,
        "jobs": args.jobs,
        "output_dir": args.output_dir,
        "t_end": args.t_end,
        "strategy": args.strategy,
        "h": args.h,
        "dt": args.dt,
        "t_max": args.t_max,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.check:
        overrides["check"] = True
    return replace(cfg, **overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args).validate()
    except (UsageError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        code, summary = run_command(cfg)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (SolverError, QuadratureError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    _print_summary(summary)
    return code


def _print_summary(summary: dict) -> None:
    skip = {"schema_version", "generated_at"}
    compact = {k: v for k, v in summary.items() if k not in skip}
    print(json.dumps(compact, indent=2, sort_keys=True, default=float))


if __name__ == "__main__":
    sys.exit(main())
