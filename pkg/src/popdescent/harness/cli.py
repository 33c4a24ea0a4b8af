"""Command line entry point.

    popdescent bench --seeds 0,1,2,3,4 --out results/bench
    popdescent converge --config my.ini
    popdescent ablate --data-dir ~/data/fashion-mnist
    popdescent sensitivity
    popdescent sample-dist
"""
from __future__ import annotations

import argparse
import logging
import sys

from ..errors import ConfigError
from .config import dump_config, load_config
from .data import DATA_DIR_ENV
from .experiment import run_experiment
from .report import write_report

COMMANDS = {
    "bench": "benchmark",
    "converge": "convergence",
    "ablate": "ablation",
    "sensitivity": "sensitivity",
    "sample-dist": "sample-dist",
}


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.replace(" ", "").split(",") if s]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma separated integers, got {text!r}") from None


def _method_list(text: str) -> list[str]:
    return [m.strip() for m in text.split(",") if m.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="popdescent", description="Seeded hyper-parameter tuning benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, mode in COMMANDS.items():
        p = sub.add_parser(name, help=f"run the {mode} experiment")
        p.add_argument("--config", help="INI-style config file; unset keys keep their defaults")
        p.add_argument("--seeds", type=_seed_list, help="comma separated seeds, e.g. 0,1,2")
        p.add_argument("--out", help="output directory (default: experiment.out_dir)")
        p.add_argument("--data-dir", help=f"directory holding Fashion-MNIST IDX files (or set {DATA_DIR_ENV})")
        if mode in ("benchmark", "convergence"):
            p.add_argument("--methods", type=_method_list, help="comma separated subset of methods")
        p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress per (method, seed)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {"experiment__mode": COMMANDS[args.command]}
    if args.seeds is not None:
        overrides["experiment__seeds"] = args.seeds
    if args.out:
        overrides["experiment__out_dir"] = args.out
    if args.data_dir:
        overrides["data__data_dir"] = args.data_dir
    if getattr(args, "methods", None):
        overrides["experiment__methods"] = args.methods
    try:
        cfg = load_config(args.config, **overrides)
    except (ConfigError, OSError) as exc:
        print(f"popdescent: {exc}", file=sys.stderr)
        return 2
    if args.print_config:
        print(dump_config(cfg))
        return 0
    try:
        report = run_experiment(cfg)
    except ConfigError as exc:
        print(f"popdescent: {exc}", file=sys.stderr)
        return 2
    paths = write_report(report, cfg.experiment.out_dir, cfg.report.formats, cfg.report.ema)
    for path in paths:
        print(path)
    failed = sum(1 for r in report.rows if r.get("status", "ok") != "ok")
    if failed:
        print(f"popdescent: {failed} trial(s) failed, see summary.md", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
