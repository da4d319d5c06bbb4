"""Command-line entry point: ``fgmddo run <config> [--out DIR] [--workers K] [--seed-offset K] [--dry-run]``.

Exit codes: 0 when every cell succeeded, 1 when any cell recorded an error,
2 on a configuration error.
"""
from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, describe_defaults, parse_config
from .pipeline import plan, run_pipeline


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fgmddo",
        description="Structure-aware offline design optimisation: seed sweeps to CSV.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=describe_defaults(),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute a run configuration",
                         formatter_class=argparse.RawDescriptionHelpFormatter, epilog=describe_defaults())
    run.add_argument("config", help="path to a key = value config file")
    run.add_argument("--out", default=None, help="output directory (default: config 'out' or ./results)")
    run.add_argument("--workers", type=int, default=None,
                     help=f"parallel cells (default: config 'workers' or all {os.cpu_count()} cores)")
    run.add_argument("--seed-offset", type=int, default=0, help="add K to every seed (default: 0)")
    run.add_argument("--dry-run", action="store_true", help="validate the config and print the cell plan")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.workers is not None and args.workers < 1:
        print("config error: --workers must be >= 1", file=sys.stderr)
        return 2
    if args.dry_run:
        cells = plan(cfg, args.seed_offset)
        print(f"{cfg.kind}: d={cfg.d} n={cfg.n}, {len(cells)} cells")
        for seed, method in cells:
            print(f"  seed={seed} method={method}")
        return 0
    n_err = run_pipeline(cfg, args.out, args.workers, args.seed_offset)
    if n_err:
        print(f"{n_err} cell(s) failed; see metric 'error' rows", file=sys.stderr)
    return 1 if n_err else 0


if __name__ == "__main__":
    sys.exit(main())
