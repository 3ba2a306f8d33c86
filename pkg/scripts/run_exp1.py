#!/usr/bin/env python3
"""Command training and calibration with the default synthetic cohort."""

import argparse

from bcigrasp.harness import default_config, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/exp1")
    ap.add_argument("--subjects", type=int, default=3)
    args = ap.parse_args()
    cfg = default_config(1, seed=args.seed, n_subjects=args.subjects)
    summary = run_experiment(cfg, args.out)
    print(f"accuracy {100 * summary['accuracy']:.1f}%  FAR {100 * summary['far']:.1f}%  "
          f"decision {summary['decision_time_s']:.2f} s  ITR {summary['itr']:.1f} bits/min")
    print(f"outputs in {args.out}")


if __name__ == "__main__":
    main()
