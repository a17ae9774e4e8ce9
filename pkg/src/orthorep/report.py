"""Matplotlib figure output for evaluation and training reports.

Everything renders through the Agg backend straight to files; nothing here
opens a window. Figures complement the delimited outputs (CSV/JSON) written
by the CLI, they never replace them.
"""

from __future__ import annotations

import logging

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .metrics import EvalReport

logger = logging.getLogger(__name__)

_DPI = 150


def scatter_plot(preds, labels, path, title: str = "Predicted vs simulated drag") -> None:
    """Prediction-vs-label scatter with the identity diagonal."""
    preds = np.asarray(preds, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    ax.scatter(labels, preds, s=12, alpha=0.6, edgecolors="none")
    lo = min(labels.min(), preds.min())
    hi = max(labels.max(), preds.max())
    pad = 0.05 * (hi - lo or 1.0)
    lo, hi = lo - pad, hi + pad
    ax.plot([lo, hi], [lo, hi], color="gray", lw=1.0, ls="--")
    ax.set_xlim(lo, hi)
    ax.set_ylim(lo, hi)
    ax.set_xlabel("simulated drag coefficient")
    ax.set_ylabel("predicted drag coefficient")
    ax.set_title(title)
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    logger.debug("wrote %s", path)


def binned_mae_plot(report: EvalReport, path) -> None:
    """Bar chart of mean absolute error per drag bin (overflow included)."""
    rows = report.binned_errors
    xs = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    ax.bar(xs, [r.mae for r in rows], color="#4878a8")
    ax.set_xticks(xs)
    ax.set_xticklabels([r.label for r in rows], rotation=35, ha="right")
    for x, r in zip(xs, rows):
        ax.annotate(str(r.count), (x, r.mae), ha="center", va="bottom",
                    fontsize=8)
    ax.set_ylabel("mean absolute error")
    ax.set_title("Prediction error by drag range (bar labels: counts)")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    logger.debug("wrote %s", path)


def training_curves_plot(log, path) -> None:
    """Train/val MSE per epoch on a log axis, learning rate on a twin axis."""
    epochs = [r.epoch for r in log]
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    ax.plot(epochs, [r.train_mse for r in log], label="train MSE")
    ax.plot(epochs, [r.val_mse for r in log], label="val MSE")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    best = min(log, key=lambda r: r.val_mse)
    ax.axvline(best.epoch, color="gray", lw=0.8, ls=":")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r.lr for r in log], color="tab:green", lw=0.8,
             label="learning rate")
    ax2.set_ylabel("learning rate", color="tab:green")
    ax.legend(loc="upper right")
    ax.set_title(f"Training curves (best val at epoch {best.epoch})")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    logger.debug("wrote %s", path)
