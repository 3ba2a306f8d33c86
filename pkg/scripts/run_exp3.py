#!/usr/bin/env python3
"""Full closed-loop grasping: decode -> AR confirm -> bridge -> vision ->
waypoints -> execution, with timing decomposition and failure taxonomy."""

import argparse
import dataclasses

from bcigrasp.harness import default_config, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/exp3")
    ap.add_argument("--subjects", type=int, default=3)
    ap.add_argument("--trials", type=int, default=12)
    ap.add_argument("--noise-px", type=float, default=0.5,
                    help="corner observation noise, pixels")
    ap.add_argument("--no-filter", action="store_true",
                    help="disable the pose temporal filtering (ablation)")
    args = ap.parse_args()

    cfg = default_config(3, seed=args.seed, n_subjects=args.subjects,
                         trials_per_subject=args.trials,
                         ablation_no_filter=args.no_filter)
    cfg = dataclasses.replace(
        cfg, vision=dataclasses.replace(cfg.vision, noise_sigma_px=args.noise_px))
    summary = run_experiment(cfg, args.out)
    print(f"GSR {100 * summary['gsr']:.1f}%  failures: "
          f"{ {k: v for k, v in summary['histogram'].items() if k != 'success'} }")
    if summary["timing"]:
        t = summary["timing"]
        print(f"t_select {t.mean_select:.2f}+/-{t.sd_select:.2f}  "
              f"t_plan {t.mean_plan:.2f}+/-{t.sd_plan:.2f}  "
              f"t_exec {t.mean_exec:.2f}+/-{t.sd_exec:.2f}  "
              f"t_total {t.mean_total:.2f}+/-{t.sd_total:.2f}")
    print(f"outputs in {args.out}")


if __name__ == "__main__":
    main()
