#!/usr/bin/env python3
"""Render a phase-transition CSV (from `edg phase-transition`) as a heat map.

One panel per rank: oversampling factor on the x-axis, empirical success
probability as the cell colour. Kept out of the library on purpose — the
toolkit emits CSV, and plotting stays a disposable post-processing step.

Usage:
    python3 scripts/plot_phase.py phase.csv [-o phase.png]
"""

import argparse
import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv_path", help="output of `edg phase-transition --format csv`")
    ap.add_argument("-o", "--out", default=None, help="image path (default: <csv>.png)")
    args = ap.parse_args()

    cells = defaultdict(dict)
    with open(args.csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            cells[int(row["rank"])][float(row["rho"])] = float(row["success_prob"])
    if not cells:
        raise SystemExit("no rows in input")

    ranks = sorted(cells)
    rhos = sorted({rho for by_rho in cells.values() for rho in by_rho})
    grid = [[cells[r].get(rho, float("nan")) for rho in rhos] for r in ranks]

    fig, ax = plt.subplots(figsize=(1.2 + 0.9 * len(rhos), 1.2 + 0.6 * len(ranks)))
    im = ax.imshow(grid, vmin=0.0, vmax=1.0, cmap="viridis", aspect="auto", origin="lower")
    ax.set_xticks(range(len(rhos)), [f"{r:g}" for r in rhos])
    ax.set_yticks(range(len(ranks)), [str(r) for r in ranks])
    ax.set_xlabel("oversampling factor ρ")
    ax.set_ylabel("rank r")
    ax.set_title("empirical recovery probability")
    for yi, row in enumerate(grid):
        for xi, v in enumerate(row):
            ax.text(xi, yi, f"{v:.2f}", ha="center", va="center",
                    color="white" if v < 0.6 else "black", fontsize=8)
    fig.colorbar(im, ax=ax, label="P(success)")
    out = args.out or args.csv_path.rsplit(".", 1)[0] + ".png"
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
