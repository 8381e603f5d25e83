"""Report figures, rendered off-screen to PNG files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_class_errors(report, path, metric: str = "pb_err") -> Path:
    """Grouped bars of a per-class metric, one group per class and one bar per variant."""
    variants = list(report.results)
    classes = report.classes
    fig, ax = plt.subplots(figsize=(1.2 * len(classes) + 2, 3.5))
    width = 0.8 / max(len(variants), 1)
    x = np.arange(len(classes))
    for i, v in enumerate(variants):
        vals = [report.value(v, c, metric) for c in classes]
        ax.bar(x + i * width, [100 * (0 if y is None else y) for y in vals], width, label=v)
    ax.set_xticks(x + width * (len(variants) - 1) / 2)
    ax.set_xticklabels(classes)
    ax.set_ylabel(f"{metric.upper().replace('_', '-')} (%)")
    ax.set_title(f"{report.system}: per-class {metric.replace('_', '-')}")
    if len(variants) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_confusion(rows, cols, matrix, path, title: str = "confusion") -> Path:
    fig, ax = plt.subplots(figsize=(0.6 * len(cols) + 2.5, 0.5 * len(rows) + 2))
    im = ax.imshow(matrix, cmap="Blues", vmin=0, vmax=max(100.0, float(np.max(matrix)) if matrix.size else 100.0))
    ax.set_xticks(range(len(cols)))
    ax.set_xticklabels(cols)
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels(rows)
    ax.set_xlabel("detector")
    ax.set_ylabel("reference class")
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            ax.text(j, i, f"{matrix[i, j]:.0f}", ha="center", va="center", fontsize=7,
                    color="white" if matrix[i, j] > 60 else "black")
    fig.colorbar(im, ax=ax, label="% of reference periods")
    ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_detections(times, curve, onsets, references, path, threshold: float | None = None,
                    title: str = "", ylabel: str = "score") -> Path:
    """A score track with detected onsets and reference onsets marked."""
    fig, ax = plt.subplots(figsize=(9, 3))
    ax.plot(times, curve, lw=0.8, color="0.3")
    if threshold is not None:
        ax.axhline(threshold, color="tab:orange", ls="--", lw=0.8, label="threshold")
    for k, t in enumerate(references):
        ax.axvline(t, color="tab:green", lw=0.8, alpha=0.6, label="reference" if k == 0 else None)
    for k, t in enumerate(onsets):
        ax.axvline(t, color="tab:red", lw=0.8, ls=":", label="detected" if k == 0 else None)
    ax.set_xlabel("time (s)")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(references) or len(onsets) or threshold is not None:
        ax.legend(fontsize=7, loc="upper right")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
