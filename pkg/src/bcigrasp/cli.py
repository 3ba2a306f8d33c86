"""Command-line front end.

    bcigrasp run --experiment {1|2|3} [--config FILE] [--seed N] --out DIR
                 [--headless | --serve PORT] [--ablation no-filter]
                 [--condition NAME]

Headless runs are deterministic batch simulations; --serve starts the
live session service on the given port so the browser console (or any
client of the documented endpoints) can drive the loop in real time.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .config import CONDITION_NAMES, ExperimentConfig, load_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcigrasp")
    sub = parser.add_subparsers(dest="cmd", required=True)
    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("--experiment", type=int, choices=(1, 2, 3), required=True)
    run.add_argument("--config", help="JSON config file; defaults per experiment")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", required=True, help="output directory")
    mode = run.add_mutually_exclusive_group()
    mode.add_argument("--headless", action="store_true", default=True)
    mode.add_argument("--serve", type=int, metavar="PORT", default=None)
    run.add_argument("--ablation", choices=("no-filter",), default=None)
    run.add_argument("--condition", choices=sorted(CONDITION_NAMES), default=None,
                     help="restrict experiment 2 to one condition")
    return parser


def resolve_config(args) -> ExperimentConfig:
    from .harness import default_config

    if args.config:
        cfg = load_config(args.config)
        if cfg.experiment != args.experiment:
            cfg = dataclasses.replace(cfg, experiment=args.experiment)
    else:
        cfg = default_config(args.experiment)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.ablation == "no-filter":
        cfg = dataclasses.replace(cfg, ablation_no_filter=True)
    if args.condition:
        cfg = dataclasses.replace(cfg, conditions=(args.condition,))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = resolve_config(args)
    if args.serve is not None:
        from .service import serve

        serve(cfg, port=args.serve, out_dir=args.out)
        return 0
    from .harness import run_experiment

    run_experiment(cfg, args.out)
    print(f"experiment {cfg.experiment} done; outputs in {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
