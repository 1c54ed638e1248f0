"""Matplotlib figure rendering for reports and activation maps."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .nncore import CLASS_NAMES


def save_confusion_figure(counts, path, title="Confusion matrix"):
    counts = np.asarray(counts)
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    im = ax.imshow(counts, cmap="Blues")
    ax.set_xticks(range(4), CLASS_NAMES)
    ax.set_yticks(range(4), CLASS_NAMES)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("True")
    ax.set_title(title)
    thresh = counts.max() / 2 if counts.max() else 0.5
    for i in range(4):
        for j in range(4):
            ax.text(j, i, str(counts[i, j]), ha="center", va="center",
                    color="white" if counts[i, j] > thresh else "black")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=150)
    plt.close(fig)


def save_activation_montage(branches, path, title=""):
    """Grid of every channel's map for both branches of one class."""
    n_a = branches["a"].shape[0]
    n_b = branches["b"].shape[0]
    cols = 8
    rows = -(-n_a // cols) + -(-n_b // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(1.6 * cols, 1.7 * rows))
    axes = np.atleast_2d(axes)
    for ax in axes.ravel():
        ax.axis("off")
    for i in range(n_a):
        ax = axes[i // cols, i % cols]
        ax.imshow(branches["a"][i], origin="lower", cmap="magma")
        ax.set_title(f"a/{i}", fontsize=7)
    off = -(-n_a // cols)
    for i in range(n_b):
        ax = axes[off + i // cols, i % cols]
        ax.imshow(branches["b"][i], origin="lower", cmap="magma")
        ax.set_title(f"b/{i}", fontsize=7)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)


def save_loss_figure(losses, path, title="Mean training loss per epoch"):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(range(1, len(losses) + 1), losses)
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Mean loss")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=150)
    plt.close(fig)
