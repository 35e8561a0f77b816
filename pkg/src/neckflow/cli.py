"""Command-line entry point.

    neckflow check-geometry  --config cfg.json --out outdir
    neckflow verify-barriers --config cfg.json --out outdir
    neckflow solve           --config cfg.json --out outdir [--dump-field]
    neckflow sweep           --config cfg.json --out outdir [--jobs N] [--dump-field]
    neckflow weighted        --config cfg.json --out outdir

Exit codes: 0 success, 1 usage, 2 numeric failure, 3 threshold breach.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError
from .harness import EXIT_USAGE, load_config, run_command

_COMMANDS = ("check-geometry", "verify-barriers", "solve", "sweep", "weighted")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neckflow",
        description="Thin-gap p-Laplace laboratory: geometry checks, barrier "
        "verification, neck solves, blow-up-rate sweeps, weighted reduction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="path to the JSON config")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
        sp.add_argument(
            "--dump-field", action="store_true", help="emit the solved field as CSV + figure"
        )
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        cfg = load_config(args.config)
        return run_command(
            args.command, cfg, args.out, jobs=args.jobs, dump_field=args.dump_field
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
