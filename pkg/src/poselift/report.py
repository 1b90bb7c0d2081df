"""Figure rendering for the CLI report paths.

matplotlib is imported lazily so non-plotting commands stay fast, and every
figure is rendered to an in-memory PNG and written atomically. Fonts, dpi,
and metadata are pinned so reruns produce byte-identical files.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .errors import InputError
from .tensorio import atomic_write_bytes

_DPI = 100


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: str | Path) -> None:
    buf = io.BytesIO()
    # fixed metadata: the default embeds the matplotlib version, which would
    # break byte-for-byte reproducibility across environments
    fig.savefig(buf, format="png", dpi=_DPI, metadata={"Software": "poselift"})
    atomic_write_bytes(path, buf.getvalue())


def save_history_figure(history: list[dict], path: str | Path) -> None:
    """Training curve: per-epoch loss and MPJPE on a shared mm-scale axis."""
    if not history:
        raise InputError("history is empty")
    plt = _pyplot()
    epochs = [row["epoch"] for row in history]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, [row["train_loss"] for row in history], label="train loss (mm)")
    ax.plot(epochs, [row["train_mpjpe"] for row in history], label="train MPJPE (mm)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mm")
    ax.set_title("training history")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def save_metric_histogram(values: np.ndarray, path: str | Path, title: str, xlabel: str) -> None:
    """Histogram of per-sample metric values."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise InputError("no values to plot")
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.hist(values, bins=min(30, max(5, values.size // 2)), edgecolor="black", alpha=0.8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def save_pose25d_figure(uv: np.ndarray, z: np.ndarray, path: str | Path, grid: tuple[int, int]) -> None:
    """Decoded pose overview: joint positions on the pixel grid, colored by depth."""
    uv = np.asarray(uv, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if uv.ndim != 2 or uv.shape[1] != 2 or z.shape != (uv.shape[0],):
        raise InputError(f"need (N, 2) uv and (N,) z, got {uv.shape} and {z.shape}")
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.5, 5))
    sc = ax.scatter(uv[:, 0], uv[:, 1], c=z, cmap="viridis", s=60, edgecolor="black")
    for j, (u, v) in enumerate(uv):
        ax.annotate(str(j), (u, v), fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_xlim(-0.5, grid[0] - 0.5)
    ax.set_ylim(grid[1] - 0.5, -0.5)  # image convention: v grows downward
    ax.set_xlabel("u (px)")
    ax.set_ylabel("v (px)")
    ax.set_title("decoded joints")
    fig.colorbar(sc, ax=ax, label="depth (mm)")
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
