#!/usr/bin/env python3
"""Feedback-condition replay: four AR conditions over paired-seed trials,
robot execution disabled."""

import argparse

from bcigrasp.harness import default_config, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/exp2")
    ap.add_argument("--subjects", type=int, default=3)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--gain", type=float, default=0.5,
                    help="congruent-feedback gain for the synthetic subjects")
    args = ap.parse_args()
    import dataclasses

    cfg = default_config(2, seed=args.seed, n_subjects=args.subjects,
                         trials_per_subject=args.trials)
    cfg = dataclasses.replace(
        cfg, subject=dataclasses.replace(cfg.subject, sway_gain=args.gain))
    summary = run_experiment(cfg, args.out)
    for cond, vals in summary.items():
        print(f"{cond:14s} acc {100 * vals['accuracy']:5.1f}%  "
              f"T {vals['decision_time_s']:.2f} s  FPR {100 * vals['fpr']:4.1f}%  "
              f"ITR {vals['itr']:5.1f}  SCI {vals['sci']:.3f}")
    print(f"outputs in {args.out}")


if __name__ == "__main__":
    main()
