"""Report figures written to files; nothing is shown on screen."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "savefig.bbox": "tight",
    # fixed metadata keeps repeated renders byte-stable
    "svg.hashsalt": "concat",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"Software": None} if path.suffix == ".png" else {"Date": None}
    fig.savefig(path, metadata=meta)
    plt.close(fig)
    return path


def plot_loss_curve(log: Sequence[dict], path) -> Path:
    """Per-epoch training (and validation) loss and MSLE."""
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_msle) = plt.subplots(1, 2, figsize=(9.0, 3.4))
        epochs = [r["epoch"] for r in log]
        for key, ax in (("loss", ax_loss), ("msle", ax_msle)):
            ax.plot(epochs, [r[f"train_{key}"] for r in log], label="train", lw=1.2)
            if log and f"val_{key}" in log[0]:
                ax.plot(epochs, [r[f"val_{key}"] for r in log], label="val", lw=1.2)
            ax.set_xlabel("epoch")
            ax.set_ylabel(key)
            ax.legend(frameon=False)
        ax_msle.set_yscale("log")
        return _save(fig, path)


def plot_predictions(labels, preds, path, title: str = "") -> Path:
    """Predicted against true popularity in log2(1 + P), with the identity line."""
    y = np.log2(np.asarray(labels, dtype=float) + 1)
    yh = np.log2(np.asarray(preds, dtype=float) + 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        lo, hi = float(min(y.min(), yh.min())), float(max(y.max(), yh.max()))
        ax.plot([lo, hi], [lo, hi], color="0.5", lw=0.8, ls="--")
        ax.scatter(y, yh, s=10, alpha=0.7)
        ax.set_xlabel("log2(1 + true)")
        ax.set_ylabel("log2(1 + predicted)")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_residuals(labels, preds, path, bins: int = 30) -> Path:
    r = np.log2(np.asarray(preds, dtype=float) + 1) - np.log2(np.asarray(labels, dtype=float) + 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.hist(r, bins=bins, color="C1", alpha=0.8)
        ax.axvline(0.0, color="0.3", lw=0.8)
        ax.set_xlabel("log2 residual (predicted - true)")
        ax.set_ylabel("cascades")
        return _save(fig, path)
