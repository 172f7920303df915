"""Delimited outputs and matplotlib figures for runs, evals and probes.

Every CSV starts with a `# config_hash=...` comment so artifacts stay
traceable to the exact configuration that produced them. Figures are rendered
to files next to the CSVs (no interactive backends).
"""

from __future__ import annotations

import csv
import math
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigurationError


def write_csv(path, header, rows, config_hash=""):
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return v


def read_csv(path):
    """Returns (header, rows-as-strings, config_hash)."""
    config_hash = ""
    try:
        with open(path, "r", newline="") as fh:
            first = fh.readline()
            if first.startswith("#"):
                if "config_hash=" in first:
                    config_hash = first.strip().split("config_hash=", 1)[1]
                header_line = fh.readline()
            else:
                header_line = first
            header = next(csv.reader([header_line]))
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    return header, rows, config_hash


def column(header, rows, name, dtype=float):
    i = header.index(name)
    return np.array([dtype(r[i]) for r in rows])


def plot_learning_curves(runs: dict, out_path):
    """Four-panel training overview for one or more labeled episode logs.

    runs maps label -> (header, rows) of an episodes.csv.
    """
    fig, axes = plt.subplots(2, 2, figsize=(11, 7))
    panels = [
        ("ratio", "successes / violations"),
        ("return", "episode return"),
        ("cum_successes", "cumulative successes"),
        ("cum_violations", "cumulative violations"),
    ]
    for ax, (col, title) in zip(axes.flat, panels):
        for label, (header, rows) in runs.items():
            ep = column(header, rows, "episode")
            y = column(header, rows, col)
            if col == "return":  # smooth the noisy per-episode return
                k = max(1, min(25, len(y) // 10))
                kernel = np.ones(k) / k
                y = np.convolve(y, kernel, mode="same")
            ax.plot(ep, y, label=label, linewidth=1.2)
        ax.set_title(title)
        ax.set_xlabel("episode")
        ax.grid(alpha=0.3)
    axes.flat[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=140)
    plt.close(fig)


def plot_trajectory(spec, header, rows, out_path, ellipse_every=5, ellipse_scale=2e-5):
    """Top-down path with stiffness ellipses (semi-axes = projected gains)."""
    fig, ax = plt.subplots(figsize=(7, 7))
    for a, b in spec.walls:
        ax.plot([a[0], b[0]], [a[1], b[1]], color="k", linewidth=2)
    for ob in spec.obstacles:
        ax.add_patch(plt.Circle(ob.center, ob.radius, color="tab:gray", alpha=0.6))
    ax.add_patch(plt.Circle(spec.goal, spec.goal_radius, color="tab:orange", alpha=0.5))
    px = column(header, rows, "px")
    py = column(header, rows, "py")
    kx = column(header, rows, "Kx_star")
    ky = column(header, rows, "Ky_star")
    ax.plot(px, py, color="tab:blue", linewidth=1.0)
    for i in range(0, len(px), ellipse_every):
        width = 2 * ellipse_scale * kx[i]
        height = 2 * ellipse_scale * ky[i]
        ax.add_patch(
            matplotlib.patches.Ellipse(
                (px[i], py[i]), width, height, fill=False, color="tab:cyan", alpha=0.8
            )
        )
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title("end-effector path with stiffness ellipses")
    fig.tight_layout()
    fig.savefig(out_path, dpi=140)
    plt.close(fig)


def plot_risk_probe(header, rows, out_path, force_plot_scale=0.01):
    """Probe summary: risk against action magnitudes and measured force.

    The force trace is scaled down (default 1/100) so it shares the risk axis.
    """
    dp = column(header, rows, "dp_norm")
    kn = column(header, rows, "k_norm")
    force = column(header, rows, "force")
    risk = column(header, rows, "risk")
    idx = np.arange(len(risk))
    fig, axes = plt.subplots(2, 1, figsize=(10, 7), sharex=True)
    ax = axes[0]
    ax.plot(idx, risk, label="risk", color="tab:red", linewidth=1.0)
    ax.plot(idx, dp / max(dp.max(), 1e-9), label="|dP| (normalized)", alpha=0.6)
    ax.plot(idx, kn / max(kn.max(), 1e-9), label="|K| (normalized)", alpha=0.6)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    ax.set_title("risk vs commanded move and stiffness")
    ax = axes[1]
    ax.plot(idx, risk, label="risk", color="tab:red", linewidth=1.0)
    ax.plot(idx, force * force_plot_scale, label=f"|F| x {force_plot_scale}", color="tab:blue",
            alpha=0.7)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    ax.set_xlabel("probe")
    ax.set_title("risk vs measured contact force")
    fig.tight_layout()
    fig.savefig(out_path, dpi=140)
    plt.close(fig)
