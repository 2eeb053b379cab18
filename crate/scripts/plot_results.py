#!/usr/bin/env python3
"""Plot suboptimality curves from an experiment output directory.

Reads aggregate.json (median + IQR across seeds) and optionally overlays the
per-seed curves reconstructed from the CSVs.
"""

import argparse
import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def per_seed_curves(run_dir: Path, optimal_value: float):
    curves = {}
    for path in sorted(run_dir.glob("seed_*.csv")):
        with path.open() as fh:
            reader = csv.DictReader(fh)
            xs, ys = [], []
            for row in reader:
                if "episode" in row:
                    xs.append(int(row["episode"]))
                    ys.append(optimal_value - float(row["value_pin"]))
                else:
                    xs.append(int(row["n"]))
                    ys.append(float(row["suboptimality"]))
        curves[path.stem] = (xs, ys)
    return curves


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("run_dir", type=Path, help="experiment output directory")
    parser.add_argument("--out", type=Path, default=None, help="output image path")
    parser.add_argument("--seeds", action="store_true", help="overlay per-seed curves")
    parser.add_argument("--logy", action="store_true", help="log-scale suboptimality")
    args = parser.parse_args()

    aggregate = json.loads((args.run_dir / "aggregate.json").read_text())
    grid = aggregate["grid"]
    median = aggregate["suboptimality_median"]
    q25 = aggregate["suboptimality_q25"]
    q75 = aggregate["suboptimality_q75"]
    vstar = aggregate["optimal_value"]

    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.fill_between(grid, q25, q75, alpha=0.25, label="interquartile range")
    ax.plot(grid, median, lw=1.8, label="median suboptimality")
    if args.seeds:
        for name, (xs, ys) in per_seed_curves(args.run_dir, vstar).items():
            ax.plot(xs, ys, lw=0.6, alpha=0.5, label=name)
    ax.axhline(0.1 * vstar, ls="--", lw=0.8, color="gray", label="0.1 V*")
    ax.set_xlabel("episode / dataset size")
    ax.set_ylabel("V* - V(policy)")
    if args.logy:
        ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.set_title(args.run_dir.name)
    fig.tight_layout()

    out = args.out or args.run_dir / "suboptimality.png"
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
