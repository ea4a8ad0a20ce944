"""Figure rendering for the report path: DET curves and training loss
curves as PNG files next to the delimited outputs. Uses the Agg
backend so it works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  backend must be set first

from .errors import DataError


def plot_det(det_points, path, label: str = "system") -> None:
    """Staircase DET plot from (P_fa, P_miss) points."""
    if not det_points:
        raise DataError("no DET points to plot")
    points = sorted(det_points)
    fas = [p for p, _ in points]
    misses = [m for _, m in points]
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    ax.step(fas, misses, where="post", label=label)
    ax.set_xlabel("false alarm probability")
    ax.set_ylabel("miss probability")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_det_overlay(curves: dict, path) -> None:
    """Several DET curves on one axis; curves maps label -> points."""
    if not curves:
        raise DataError("no DET curves to plot")
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    for label in sorted(curves):
        points = sorted(curves[label])
        ax.step([p for p, _ in points], [m for _, m in points],
                where="post", label=label)
    ax.set_xlabel("false alarm probability")
    ax.set_ylabel("miss probability")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_losses(train_losses, dev_losses, path) -> None:
    if not train_losses or not dev_losses:
        raise DataError("no loss history to plot")
    epochs = range(1, len(train_losses) + 1)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(epochs, train_losses, label="train")
    ax.plot(range(1, len(dev_losses) + 1), dev_losses, label="dev")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean cross-entropy loss")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
