#!/usr/bin/env python3
"""Render the plot-ready CSV files of a run directory as PNG figures.

The pipeline itself never imports matplotlib; this helper turns the emitted
data series (training losses, per-step RMSE, reward-vs-time, trajectories)
into quick-look plots.

Usage: render_figures.py RUN_DIR [--out FIGURES_DIR]
"""
import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def numeric_csv(path: Path):
    rows = [r for r in csv.reader(path.open())
            if r and not r[0].startswith("#")]
    header = rows[0]
    data = [[float(x) for x in r] for r in rows[1:]]
    return header, list(zip(*data))


def save(fig, out: Path, name: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    fig.savefig(out / name, dpi=130, bbox_inches="tight")
    plt.close(fig)
    print(f"wrote {out / name}")


def plot_losses(run: Path, out: Path) -> None:
    fig, ax = plt.subplots()
    for channel in ("c", "d"):
        path = run / f"loss_{channel}.csv"
        if not path.exists():
            continue
        _, (epochs, losses) = numeric_csv(path)
        ax.semilogy(epochs, losses, label=f"model {channel.upper()}")
    if ax.lines:
        ax.set_xlabel("epoch")
        ax.set_ylabel("training loss")
        ax.legend()
        save(fig, out, "training_loss.png")
    else:
        plt.close(fig)


def plot_rmse(run: Path, out: Path) -> None:
    fig, ax = plt.subplots()
    for channel in ("c", "d"):
        path = run / "report" / f"rmse_{channel}.csv"
        if not path.exists():
            continue
        _, (t, rmse) = numeric_csv(path)
        ax.plot(t, rmse, label=f"[{channel.upper()}] prediction")
    if ax.lines:
        ax.set_xlabel("time step")
        ax.set_ylabel("held-out RMSE")
        ax.legend()
        save(fig, out, "rmse_per_step.png")
    else:
        plt.close(fig)


def plot_rewards(run: Path, out: Path) -> None:
    path = run / "report" / "reward_vs_time.csv"
    if not path.exists():
        return
    header, cols = numeric_csv(path)
    fig, ax = plt.subplots()
    for name, series in zip(header[1:], cols[1:]):
        ax.plot(cols[0], series, label=name, alpha=0.8)
    ax.set_xlabel("time step")
    ax.set_ylabel("expected reward")
    ax.legend(fontsize=7)
    save(fig, out, "reward_vs_time.png")


def plot_trajectories(run: Path, out: Path) -> None:
    eval_dir = run / "eval"
    if not eval_dir.exists():
        return
    for path in sorted(eval_dir.glob("*.trajectory.csv")):
        header, cols = numeric_csv(path)
        fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(6, 6))
        for name, series in zip(header[2:], cols[2:]):
            ax1.plot(cols[0], series, label=name)
        ax1.set_ylabel("concentration / volume")
        ax1.legend(ncol=3, fontsize=8)
        ax2.step(cols[0], cols[1], where="post")
        ax2.set_ylabel("feed rate u")
        ax2.set_xlabel("time step")
        name = path.name.removesuffix(".trajectory.csv")
        save(fig, out, f"trajectory_{name}.png")


def plot_benefits(run: Path, out: Path) -> None:
    path = run / "report" / "table6.csv"
    if not path.exists():
        return
    rows = [r for r in csv.reader(path.open())
            if r and not r[0].startswith("#")][1:]
    names = [r[0] for r in rows]
    totals = [float(r[1]) for r in rows]
    fig, ax = plt.subplots()
    ax.bar(range(len(names)), totals)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("total expected benefits")
    save(fig, out, "total_benefits.png")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("run", type=Path, help="run directory")
    parser.add_argument("--out", type=Path, default=None,
                        help="figure output directory (default RUN/figures)")
    args = parser.parse_args()
    out = args.out or args.run / "figures"
    plot_losses(args.run, out)
    plot_rmse(args.run, out)
    plot_rewards(args.run, out)
    plot_trajectories(args.run, out)
    plot_benefits(args.run, out)


if __name__ == "__main__":
    main()
