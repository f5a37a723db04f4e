"""Detector study CLI.

    migdetect --train RUN_DIR [RUN_DIR ...] [--scenario NAME] [--seed N]
    migdetect --ablation RUN_MIMIC RUN_ABLATED [--seed N]

Both modes print the metric table and write the JSON report.
"""

from __future__ import annotations

import argparse
import sys

from .report import format_importances, format_table, run_ablation, run_training, save_report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="migdetect")
    mode = parser.add_mutually_exclusive_group(required=True)
    mode.add_argument("--train", nargs="+", metavar="RUN_DIR",
                      help="train/evaluate on these testbed run directories")
    mode.add_argument("--ablation", nargs=2, metavar=("RUN_MIMIC", "RUN_ABLATED"),
                      help="paired evaluation of a run against its ablated twin")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--scenario", default=None,
                        help="override the scenario name in the report")
    parser.add_argument("--report", default="detect_report.json",
                        help="JSON report output path")
    args = parser.parse_args(argv)

    try:
        if args.train:
            report = run_training(args.train, seed=args.seed,
                                  scenario=args.scenario)
        else:
            report = run_ablation(args.ablation[0], args.ablation[1],
                                  seed=args.seed)
    except (OSError, ValueError) as exc:
        print(f"migdetect: error: {exc}", file=sys.stderr)
        return 2

    print(format_table(report["runs"]))
    importances = format_importances(report["runs"])
    if importances:
        print(importances)
    if "ablation" in report:
        deltas = report["ablation"]["delta_f1_off_minus_on"]
        print("\ndelta F1 (mimicry off - on): "
              + ", ".join(f"{k}={v:+.2f}" for k, v in deltas.items()))
    save_report(report, args.report)
    print(f"\nreport written to {args.report}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
