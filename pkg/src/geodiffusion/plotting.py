"""Report figures. Every report-producing command saves one of these PNGs
next to its JSON/CSV output. Agg backend only; nothing here opens a window."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update(
    {
        "figure.dpi": 110,
        "savefig.dpi": 150,
        "font.size": 9,
        "axes.grid": True,
        "grid.alpha": 0.3,
    }
)


def save_figure(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def loss_curve_figure(steps, losses, eval_steps=None, eval_losses=None):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, losses, lw=0.9, label="train (per step)")
    if eval_steps:
        ax.plot(eval_steps, eval_losses, "o-", ms=4, label="held-out")
    ax.set_xlabel("step")
    ax.set_ylabel("mse loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    return fig


def image_grid_figure(images: np.ndarray, ncol: int = 8, titles=None):
    """images: (N, 3, H, W) in [-1, 1]."""
    n = len(images)
    ncol = min(ncol, n)
    nrow = -(-n // ncol)
    fig, axes = plt.subplots(nrow, ncol, figsize=(1.3 * ncol, 1.4 * nrow))
    axes = np.atleast_1d(axes).reshape(nrow, ncol)
    for i in range(nrow * ncol):
        ax = axes[i // ncol, i % ncol]
        ax.axis("off")
        if i < n:
            ax.imshow(((images[i] + 1.0) / 2.0).clip(0, 1).transpose(1, 2, 0))
            if titles is not None:
                ax.set_title(str(titles[i]), fontsize=6)
    fig.tight_layout()
    return fig


def fidelity_sweep_figure(report):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    values = report.values
    for row in report.per_seed:
        ax.plot(values, row, color="tab:gray", alpha=0.35, lw=0.8)
    ax.plot(values, report.mean_curve, "o-", color="tab:blue", label="seed mean")
    ax.set_xlabel(report.attribute)
    ax.set_ylabel(report.statistic)
    ax.set_title(f"spearman(mean curve) = {report.spearman_mean_curve:+.3f}")
    ax.legend()
    fig.tight_layout()
    return fig


def recoverability_figure(report):
    counts = report.missing_counts
    width = 0.8 / len(report.strategies)
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    xs = np.arange(len(counts), dtype=float)
    for i, strategy in enumerate(report.strategies):
        ys = [report.overall_mae(strategy, c) for c in counts]
        ax.bar(xs + i * width, ys, width=width, label=strategy)
    ax.set_xticks(xs + width * (len(report.strategies) - 1) / 2)
    ax.set_xticklabels([str(c) for c in counts])
    ax.set_xlabel("missing attributes")
    ax.set_ylabel("probe MAE (normalized scale)")
    ax.legend()
    fig.tight_layout()
    return fig


def metric_histogram_figure(ssims, psnrs, distance: float):
    fig, axes = plt.subplots(1, 2, figsize=(8, 3))
    axes[0].hist(ssims, bins=20, color="tab:blue")
    axes[0].set_xlabel("ssim")
    axes[1].hist(psnrs, bins=20, color="tab:orange")
    axes[1].set_xlabel("psnr (dB)")
    fig.suptitle(f"moment distance = {distance:.4f}")
    fig.tight_layout()
    return fig
