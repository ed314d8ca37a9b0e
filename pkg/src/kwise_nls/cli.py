"""Command-line entry point.

Exit status: 0 on success, 2 on configuration errors, 3 when a required
solver computation fails.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConvergenceError, InvalidStateError, NotProjectableError
from .experiments import (EXPERIMENTS, ConfigError, defaults_reference, load_config,
                          parse_config, run_experiment)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kwise-nls",
                                 description="Radial experiments for K-wise coupled NLS systems.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", type=Path, help="INI configuration file")
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("--jobs", type=int, help="worker processes (overrides the config)")
    d = sub.add_parser("defaults", help="print the configuration reference")
    d.add_argument("--out", type=Path, help="write the reference to this file")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "defaults":
        text = defaults_reference()
        if args.out:
            args.out.write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    overrides = {("run", "experiment"): args.command}
    if args.seed is not None:
        overrides[("run", "seeds")] = args.seed
    if args.jobs is not None:
        overrides[("run", "jobs")] = args.jobs
    try:
        if args.config:
            config = load_config(args.config, overrides)
        else:
            config = parse_config("", None, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        path = run_experiment(config, args.out)
    except (ConvergenceError, NotProjectableError, InvalidStateError, ArithmeticError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
