"""Command line entry point: ``msaw <task> --config PATH [--seed N] [--threads N] [--out DIR]``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import TASKS, ConfigError, load_config
from .tasks import EXIT_ERROR, run_task


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msaw", description="Myopic self-avoiding walk experiments.")
    sub = parser.add_subparsers(dest="task", required=True)
    for name in TASKS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML experiment configuration")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--threads", type=int, default=1, help="replica worker threads")
        p.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
    return parser


def _setup_logging():
    level = os.environ.get("MSAW_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_ERROR
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, out=args.out)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report = run_task(cfg, args.task, threads=args.threads)
    for check in report["checks"]:
        print(f"{'PASS' if check.get('passed') else 'FAIL'}  {check['name']}")
    if "error" in report:
        print(f"error: {report['error']['message']}", file=sys.stderr)
    print(f"exit {report['exit_code']}  ({cfg.output.get('dir')})")
    return int(report["exit_code"])


if __name__ == "__main__":
    sys.exit(main())
