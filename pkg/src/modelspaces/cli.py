"""Command-line entry point for the experiment harness."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .harness import (ConfigError, METHODS, comm_audit_from_dir,
                      epsilon_grid, load_config, run, run_tuning_sweep,
                      size_sweep)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRIAL_FAILURE = 3


def _add_common(parser):
    parser.add_argument("--config", required=True, help="path to a JSON config")
    parser.add_argument("--out", default="out", help="artifact directory")
    parser.add_argument("--trials", type=int, default=None,
                        help="override the config's trial count")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config's base seed")
    parser.add_argument("--workers", type=int, default=None,
                        help="override the config's worker count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modelspaces",
        description="Aggregate distributed models by intersecting their "
                    "acceptable-weight spaces.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="multi-trial experiment with baselines")
    _add_common(p_run)

    p_grid = sub.add_parser("epsilon-grid",
                            help="k=2 threshold grid: intersection found/accuracy")
    _add_common(p_grid)
    p_grid.add_argument("--eps", default="0.1,0.3,0.5,0.7,0.9",
                        help="comma-separated threshold values for both axes")

    p_size = sub.add_parser("size-sweep",
                            help="hidden-width vs accuracy across settings")
    _add_common(p_size)
    p_size.add_argument("--settings", default="100:1.0,100:0.5",
                        help="comma-separated m_eps:eps_hidden pairs")

    p_tune = sub.add_parser("tuning-sweep",
                            help="fine-tuning comparators over sample sizes")
    _add_common(p_tune)
    p_tune.add_argument("--sizes", default="100,300,1000",
                        help="comma-separated public-sample sizes")

    p_comm = sub.add_parser("comm-audit",
                            help="message/byte accounting for a completed run")
    _add_common(p_comm)
    return parser


def _load(args):
    config = load_config(args.config)
    if args.trials is not None:
        config = replace(config, trials=args.trials)
    if args.seed is not None:
        config = replace(config, base_seed=args.seed)
    if args.workers is not None:
        config = replace(config, workers=args.workers)
    return config


def _parse_settings(text: str):
    settings = []
    for part in text.split(","):
        m_eps, eps_hidden = part.split(":")
        settings.append((int(m_eps), float(eps_hidden)))
    return settings


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load(args)
        if args.command == "run":
            summary = run(config, out_dir=args.out)
            for method in METHODS:
                mean, std = summary.table[method]
                print(f"{method:>16s}  {mean:.3f} ({std:.3f})")
            if summary.n_failed:
                print(f"{summary.n_failed} trial(s) failed; see run_meta.json",
                      file=sys.stderr)
                return EXIT_TRIAL_FAILURE
        elif args.command == "epsilon-grid":
            eps_values = [float(v) for v in args.eps.split(",")]
            rows = epsilon_grid(config, eps_values, out_dir=args.out)
            found = sum(1 for r in rows if r["found"] == "true")
            print(f"grid {len(eps_values)}x{len(eps_values)}: "
                  f"{found}/{len(rows)} cells intersect")
        elif args.command == "size-sweep":
            rows = size_sweep(config, _parse_settings(args.settings),
                              out_dir=args.out)
            for r in rows:
                print(f"{r['method']:>48s}  acc {float(r['accuracy_mean']):.3f}  "
                      f"width {float(r['n_hidden_mean']):.1f}")
        elif args.command == "tuning-sweep":
            sizes = [int(v) for v in args.sizes.split(",")]
            rows = run_tuning_sweep(config, sizes, out_dir=args.out)
            for r in rows:
                print(f"size {r['size']:>6d}  {r['method']:>16s}  "
                      f"{r['mean']:.3f} ({r['std']:.3f})")
        elif args.command == "comm-audit":
            try:
                audit = comm_audit_from_dir(args.out)
            except ConfigError:
                summary = run(replace(config, trials=1), out_dir=args.out)
                if summary.n_failed:
                    return EXIT_TRIAL_FAILURE
                audit = comm_audit_from_dir(args.out)
            for phase, rec in audit["phases"].items():
                direction = "up" if rec["upstream"] else "down"
                print(f"{phase:>18s}  {direction:>4s}  "
                      f"{rec['messages']:>3d} msgs  {rec['bytes']:>10d} bytes")
            print(f"upstream rounds: {audit['upstream_rounds']}  "
                  f"broadcasts: {audit['broadcasts']}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
