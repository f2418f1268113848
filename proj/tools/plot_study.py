#!/usr/bin/env python3
"""Plot a scaling-study CSV written by `snid study`."""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd

METRICS = ["max_weight_err", "shift_rms", "E_inf", "query_ratio"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv")
    ap.add_argument("-o", "--output", default="study.png")
    args = ap.parse_args()

    df = pd.read_csv(args.csv)
    df = df[df["status"] == "ok"]
    fig, axes = plt.subplots(1, len(METRICS), figsize=(4 * len(METRICS), 3.5))
    for ax, col in zip(axes, METRICS):
        for beta, g in df.groupby("beta"):
            med = g.groupby("D")[col].median()
            ax.plot(med.index, med.values, marker="o", label=f"beta={beta:g}")
        ax.set_xlabel("D")
        ax.set_title(col)
        if col != "query_ratio":
            ax.set_yscale("log")
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)


if __name__ == "__main__":
    main()
