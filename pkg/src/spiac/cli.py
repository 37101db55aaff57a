"""Command line entry point: ``spiac {train,aggregate,report,ablate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import (ConfigError, RunConfig, aggregate_files, apply_overrides, curve_files, load_config,
                      load_groups, run_ablation, run_training, threshold_report, write_curve, write_report)


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"5"`` means seeds 0..4; ``"3,7,11"`` is an explicit list."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if len(parts) == 1:
        n = int(parts[0])
        if n < 1:
            raise argparse.ArgumentTypeError("seed count must be >= 1")
        return tuple(range(n))
    return tuple(int(p) for p in parts)


def parse_floats(text: str) -> list[float]:
    return [float(p) for p in text.split(",") if p.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spiac", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log evaluation progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one config over one or more seeds")
    p.add_argument("--env", required=True)
    p.add_argument("--config", help="flat key-value config file")
    p.add_argument("--seeds", type=parse_seeds, default=(0,), help="count or comma list")
    p.add_argument("--steps", type=int, help="environment steps per seed")
    p.add_argument("--out", required=True, help="output directory for curve CSVs")

    p = sub.add_parser("aggregate", help="mean/std curve across the seeds of a run directory")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=1.0, help="exponential smoothing factor in (0, 1]")

    p = sub.add_parser("report", help="timesteps-to-threshold table")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--thresholds", type=parse_floats, required=True)
    p.add_argument("--out", help="write the CSV here instead of stdout")

    p = sub.add_parser("ablate", help="cartesian sweep over loss_kind x policy_value x optimizer")
    p.add_argument("--grid", required=True, help="grid file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    try:
        if args.command == "train":
            cfg = load_config(args.config) if args.config else RunConfig()
            cfg = apply_overrides(cfg, {"env_id": args.env, "output_dir": args.out,
                                        "seeds": ",".join(map(str, args.seeds))})
            if args.steps is not None:
                cfg = apply_overrides(cfg, {"total_steps": str(args.steps)})
                if cfg.eval_every > cfg.total_steps:
                    cfg = apply_overrides(cfg, {"eval_every": str(cfg.total_steps)})
            cfg.validate()
            for path in run_training(cfg):
                print(path)
        elif args.command == "aggregate":
            points = aggregate_files(curve_files(args.in_dir), args.alpha)
            write_curve(args.out, points)
        elif args.command == "report":
            rows = threshold_report(load_groups(args.in_dir), sorted(args.thresholds))
            if args.out:
                write_report(args.out, rows)
            else:
                write_report(sys.stdout, rows)
        elif args.command == "ablate":
            result = run_ablation(Path(args.grid).read_text())
            print(result.report_path)
            print(result.invariants_path)
            if result.min_target_violations:
                print(f"min-target violations: {result.min_target_violations}", file=sys.stderr)
                return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
