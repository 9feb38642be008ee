"""``kfp-lab <experiment> --config <path.json> [--seed N] [--out path.csv]``."""
from __future__ import annotations

import argparse
import logging
import sys

from ..errors import ConfigError, KFPError
from .config import EXPERIMENTS, load_config
from .experiments import run_experiment
from .output import render_csv, write_outputs

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("kfplab")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="kfp-lab", description="Kinetic Fokker-Planck coupling experiments.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--out", default=None, help="CSV path (default: out_path from config, else stdout)")
    ap.add_argument("--workers", type=int, default=1, help="worker processes; output does not depend on it")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.workers < 1:
        print("kfp-lab: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.experiment, args.seed, args.out)
    except ConfigError as exc:
        print(f"kfp-lab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_experiment(cfg, workers=args.workers)
    except ConfigError as exc:
        print(f"kfp-lab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KFPError, ArithmeticError) as exc:
        print(f"kfp-lab: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if cfg.out_path:
        path = write_outputs(cfg, result, cfg.out_path)
        log.info("wrote %s", path)
    else:
        sys.stdout.write(render_csv(cfg, result))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
