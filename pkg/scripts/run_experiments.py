#!/usr/bin/env python3
"""Reproduce the full desk-scale experiment suite into an output directory.

Runs the five-node convex and two-layer MNIST tables, the two-node threshold
grid, and the synthetic sweeps. MNIST experiments need the fetched corpus
(scripts/fetch_mnist.py). Expect a few minutes total on a laptop.
"""

import argparse
import sys
import time
from pathlib import Path

REPO = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO / "src"))

from modelspaces.harness import (METHODS, epsilon_grid, load_config, run,
                                 run_tuning_sweep, size_sweep)

EXPERIMENTS = ("mnist-convex", "mnist-nn", "grid", "synthetic")


def banner(name):
    print(f"\n=== {name} " + "=" * max(0, 60 - len(name)))


def print_table(summary):
    for method in METHODS:
        mean, std = summary.table[method]
        print(f"  {method:>16s}  {mean:.3f} ({std:.3f})")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out")
    parser.add_argument("--only", choices=EXPERIMENTS, default=None)
    args = parser.parse_args()
    out = Path(args.out)
    todo = [args.only] if args.only else list(EXPERIMENTS)
    t0 = time.time()

    if "mnist-convex" in todo:
        banner("mnist convex, five nodes")
        config = load_config(REPO / "configs" / "mnist_convex_k5.json")
        print_table(run(config, out_dir=out / config.name))

    if "mnist-nn" in todo:
        banner("mnist two-layer net, five nodes")
        config = load_config(REPO / "configs" / "mnist_nn_k5.json")
        print_table(run(config, out_dir=out / config.name))

    if "grid" in todo:
        banner("threshold grid, two nodes")
        config = load_config(REPO / "configs" / "mnist_epsilon_grid_k2.json")
        rows = epsilon_grid(config, [0.1, 0.3, 0.5, 0.7, 0.9],
                            out_dir=out / config.name)
        found = sum(r["found"] == "true" for r in rows)
        print(f"  {found}/{len(rows)} cells intersect "
              f"(see {out / config.name / 'epsilon_grid.csv'})")

    if "synthetic" in todo:
        banner("synthetic ten-class, five nodes")
        config = load_config(REPO / "configs" / "synthetic_nn_k5.json")
        print_table(run(config, out_dir=out / config.name))
        settings = [(24, 0.25), (24, 0.5), (24, 1.0), (24, 2.0)]
        for row in size_sweep(config, settings, out_dir=out / config.name):
            print(f"  {row['method']:>44s}  acc {float(row['accuracy_mean']):.3f}"
                  f"  width {float(row['n_hidden_mean']):.1f}")
        for row in run_tuning_sweep(config, [100, 300],
                                    out_dir=out / config.name):
            print(f"  size {row['size']:>4d}  {row['method']:>16s}  "
                  f"{row['mean']:.3f} ({row['std']:.3f})")

    print(f"\ndone in {time.time() - t0:.0f}s; artifacts under {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
