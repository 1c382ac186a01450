"""Figures for evaluation reports; always rendered to files (Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .beats import CLASS_NAMES  # noqa: E402

GOLDEN = (np.sqrt(5) - 1.0) / 2.0
FIG_WIDTH = 4.5

COLORS = {"N": "#4d4d4d", "S": "#2b8cbe", "V": "#d7301f"}

params = {
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "font.size": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "lines.linewidth": 1.2,
    "figure.dpi": 150,
    "savefig.bbox": "tight",
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def plot_confusion(cm, path, title=None):
    counts = np.asarray(cm.counts)
    row_frac = counts / np.maximum(counts.sum(axis=1, keepdims=True), 1)
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=(FIG_WIDTH * 0.8, FIG_WIDTH * 0.8))
        ax.imshow(row_frac, cmap="Blues", vmin=0, vmax=1)
        for i in range(3):
            for j in range(3):
                ax.text(j, i, f"{counts[i, j]}", ha="center", va="center",
                        color="white" if row_frac[i, j] > 0.6 else "black")
        ax.set_xticks(range(3), CLASS_NAMES)
        ax.set_yticks(range(3), CLASS_NAMES)
        ax.set_xlabel("Predicted")
        ax.set_ylabel("Ground truth")
        if title:
            ax.set_title(title)
        fig.savefig(path)
    plt.close(fig)


def plot_roc(curves, path):
    """``curves`` maps a class name to a RocCurve."""
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=(FIG_WIDTH * 0.8, FIG_WIDTH * 0.8))
        ax.plot([0, 1], [0, 1], ls=":", color="0.6", lw=0.8)
        for name, curve in curves.items():
            ax.plot(curve.fpr, curve.tpr, color=COLORS.get(name),
                    label=f"{name} vs rest (AUC = {curve.auc:.4f})")
        ax.set_xlim(-0.01, 1.0)
        ax.set_ylim(0.0, 1.01)
        ax.set_xlabel("False positive rate")
        ax.set_ylabel("True positive rate")
        ax.legend(loc="lower right", frameon=False)
        fig.savefig(path)
    plt.close(fig)


def plot_history(history, path):
    epochs = [r["epoch"] for r in history]
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=(FIG_WIDTH, FIG_WIDTH * GOLDEN))
        ax.semilogy(epochs, [r["train_loss"] for r in history], label="train loss / beat")
        if any(r.get("val_loss") not in (None, "") for r in history):
            ax.semilogy(epochs, [float(r["val_loss"]) for r in history], label="val loss / beat")
        ax.set_xlabel("Epoch")
        ax.set_ylabel("Cross-entropy")
        ax2 = ax.twinx()
        ax2.step(epochs, [r["lr"] for r in history], where="post", color="0.6", lw=0.8)
        ax2.set_yscale("log")
        ax2.set_ylabel("Learning rate", color="0.4")
        ax.legend(loc="upper right", frameon=False)
        fig.savefig(path)
    plt.close(fig)
