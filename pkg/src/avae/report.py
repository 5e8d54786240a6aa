"""Delimited outputs and the figures rendered alongside them.

CSV files carry a header row, comma separation and '.' decimals; floats are
written with 17 significant digits so every f64 round-trips exactly.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .losses import LossBundle
from .toy import EvalReport

LOSSES_HEADER = ("iteration",) + LossBundle.FIELDS
SWEEP_HEADER = ("z", "xi_index", "x1", "x2")
EVAL_HEADER = EvalReport.FIELDS
COMPARE_HEADER = ("model",) + EvalReport.FIELDS + ("density_ratio", "distance_margin")


def fmt_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header, rows):
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt_value(v) for v in row) + "\n")


def losses_rows(records):
    for rec in records:
        yield (rec.iteration,) + rec.bundle.values()


def eval_row(report: EvalReport):
    return report.values()


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in entries:
            fh.write(f"{key}={fmt_value(value)}\n")


def save_losses_figure(records, path):
    iters = [rec.iteration for rec in records]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for name in ("l_vae", "l_recon", "l_kl"):
        axes[0].plot(iters, [getattr(r.bundle, name) for r in records], label=name, lw=0.8)
    axes[0].set_xlabel("iteration")
    axes[0].set_title("autoencoding losses")
    axes[0].legend()
    for name in ("l_g", "l_z", "l_m", "l_c"):
        axes[1].plot(iters, [getattr(r.bundle, name) for r in records], label=name, lw=0.8)
    axes[1].set_xlabel("iteration")
    axes[1].set_title("adversarial losses")
    axes[1].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_sweep(ax, data_xy, sweep_rows, title):
    ax.scatter(data_xy[:, 0], data_xy[:, 1], s=2, c="0.8", label="data", rasterized=True)
    trace = sweep_rows[sweep_rows[:, 1] == 0.0]
    rest = sweep_rows[sweep_rows[:, 1] != 0.0]
    if rest.size:
        ax.scatter(rest[:, 2], rest[:, 3], s=3, c=rest[:, 0], cmap="viridis", alpha=0.4)
    sc = ax.scatter(trace[:, 2], trace[:, 3], s=5, c=trace[:, 0], cmap="viridis", label="sweep")
    ax.set_title(title)
    ax.set_xlim(-8, 8)
    ax.set_ylim(-3.5, 3.5)
    return sc


def save_manifold_figure(data_xy, sweep_rows, path, title="latent sweep"):
    fig, ax = plt.subplots(figsize=(7, 5))
    sc = _plot_sweep(ax, data_xy, sweep_rows, title)
    fig.colorbar(sc, ax=ax, label="z")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_compare_figure(data_xy, sweep_vae, sweep_avae, path):
    fig, axes = plt.subplots(1, 2, figsize=(12, 5), sharey=True)
    _plot_sweep(axes[0], data_xy, sweep_vae, "decoder reconstruction manifold")
    sc = _plot_sweep(axes[1], data_xy, sweep_avae, "generator reconstruction manifold")
    fig.colorbar(sc, ax=axes, label="z", fraction=0.03)
    fig.savefig(path, dpi=120)
    plt.close(fig)
