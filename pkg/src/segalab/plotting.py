"""Figures for the ``report`` command; always rendered off-screen to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# Fixed metadata so reruns write identical PNG bytes.
_PNG_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def sweep_figure(path, x, metrics: dict, xlabel: str, title: str = ""):
    """Line plot of MAE and SROCC against a swept parameter, twin y axes."""
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(x, metrics["mae"], "o-", color="tab:red", label="MAE")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("MAE", color="tab:red")
    ax2 = ax.twinx()
    ax2.plot(x, metrics["srocc"], "s--", color="tab:blue", label="SROCC")
    ax2.set_ylabel("SROCC", color="tab:blue")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def bar_figure(path, labels, values, ylabel: str, title: str = ""):
    fig, ax = plt.subplots(figsize=(5, 3.4))
    pos = np.arange(len(labels))
    ax.bar(pos, values, color="tab:gray")
    ax.set_xticks(pos, labels, rotation=20, ha="right")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def example_figure(path, clean, adversarial, delta):
    """Clean image, attacked image and the amplified perturbation side by side."""
    fig, axes = plt.subplots(1, 3, figsize=(7, 2.6))
    eps = max(float(np.abs(delta).max()), 1e-12)
    panels = [(clean, "clean"), (adversarial, "attacked"), (0.5 + 0.5 * delta / eps, "perturbation")]
    for ax, (img, name) in zip(axes, panels):
        ax.imshow(np.clip(img, 0, 1).squeeze(), interpolation="nearest")
        ax.set_title(name)
        ax.axis("off")
    fig.tight_layout()
    return _save(fig, path)
