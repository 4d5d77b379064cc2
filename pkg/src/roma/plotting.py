"""Report figures written next to the CSV outputs."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "svg.hashsalt": "roma",
}
# fixed metadata keeps re-rendered PNGs byte-stable
_META = {"Software": None}


def _size(width: float = 6.0) -> tuple[float, float]:
    return width, width * (math.sqrt(5) - 1) / 2


def plot_metrics(records: list[dict], path) -> Path:
    """Loss and collapse diagnostics against epoch."""
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=_size(8.0))
        epochs = [r["epoch"] for r in records]
        ax1.plot(epochs, [r["loss"] for r in records], color="C0")
        ax1.set_xlabel("epoch")
        ax1.set_ylabel("mean training loss")
        ax2.plot(epochs, [r["mean_offdiag_cos"] for r in records], color="C1", label="mean off-diag cos")
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("cosine")
        twin = ax2.twinx()
        twin.plot(epochs, [r["emb_std"] for r in records], color="C2", label="emb std")
        twin.set_ylabel("emb std")
        ax2.legend(handles=ax2.get_lines() + twin.get_lines(), loc="best", frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata=_META)
        plt.close(fig)
    return path


def plot_ablation(rows: list[dict], axis: str, path) -> Path:
    """Bar chart of probe and kNN accuracy per ablation variant."""
    path = Path(path)
    labels = [r["variant"] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=_size(6.0))
        xs = range(len(rows))
        w = 0.38
        ax.bar([x - w / 2 for x in xs], [100 * r["probe_top1"] for r in rows], w, label="linear probe")
        ax.bar([x + w / 2 for x in xs], [100 * r["knn_top1"] for r in rows], w, label="kNN")
        ax.set_xticks(list(xs))
        ax.set_xticklabels(labels)
        lo = min([100 * r["probe_top1"] for r in rows] + [100 * r["knn_top1"] for r in rows])
        ax.set_ylim(max(0.0, lo - 5), 100.5)
        ax.set_ylabel("top-1 accuracy (%)")
        ax.set_title(f"ablation: {axis}")
        ax.legend(frameon=False, loc="lower right")
        fig.tight_layout()
        fig.savefig(path, metadata=_META)
        plt.close(fig)
    return path
