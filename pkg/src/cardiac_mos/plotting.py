"""Figures written next to the delimited training and evaluation outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

CLASS_NAMES = ("normal", "hypo", "akinetic", "dyskinetic")


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_history(history, path) -> None:
    """Training loss and held-out accuracy per epoch, one line per phase."""
    fig, (ax_l, ax_a) = plt.subplots(1, 2, figsize=(9, 3.5))
    offset = 0
    for phase in ("baseline", "finetune"):
        rows = history.phase(phase)
        if not rows:
            continue
        x = np.arange(len(rows)) + offset
        ax_l.plot(x, [r.loss for r in rows], marker=".", label=phase)
        accs = [r.holdout_acc for r in rows]
        if all(a is not None for a in accs):
            ax_a.plot(x, accs, marker=".", label=phase)
        offset += len(rows)
    ax_l.set_xlabel("epoch")
    ax_l.set_ylabel("training cross-entropy")
    ax_l.set_yscale("log")
    ax_a.set_xlabel("epoch")
    ax_a.set_ylabel("held-out segment accuracy")
    ax_a.set_ylim(0, 1.02)
    for ax in (ax_l, ax_a):
        ax.grid(alpha=0.3)
        if ax.get_legend_handles_labels()[0]:
            ax.legend(frameon=False)
    _finish(fig, path)


def plot_confusion(matrix: np.ndarray, path, labels=CLASS_NAMES) -> None:
    m = np.asarray(matrix)
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    ax.imshow(m, cmap="Blues")
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            ax.text(j, i, str(m[i, j]), ha="center", va="center",
                    color="white" if m[i, j] > m.max() / 2 else "black")
    ax.set_xticks(range(len(labels)), labels, rotation=30)
    ax.set_yticks(range(len(labels)), labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    _finish(fig, path)


def plot_msi(pred_msi, true_msi, path, rho=None) -> None:
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.scatter(true_msi, pred_msi, s=14, alpha=0.7)
    ax.plot([0, 3], [0, 3], color="grey", lw=0.8, ls="--")
    ax.set_xlim(-0.1, 3.1)
    ax.set_ylim(-0.1, 3.1)
    ax.set_xlabel("true MSI")
    ax.set_ylabel("predicted MSI")
    if rho is not None:
        ax.set_title(f"Pearson r = {rho:.3f}")
    _finish(fig, path)
