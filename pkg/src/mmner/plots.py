"""Report figures written next to the delimited outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .seqdata import ENTITY_TYPES  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def plot_training(history, path):
    """Loss and span-F1 per epoch, two stacked panels."""
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_f1) = plt.subplots(2, 1, figsize=(5, 4.5), sharex=True)
        epochs = [e.epoch for e in history]
        ax_loss.plot(epochs, [e.loss for e in history], marker="o", ms=3, color="k")
        ax_loss.set_ylabel("mean loss")
        if any(e.train_f1 is not None for e in history):
            ax_f1.plot(epochs, [100 * (e.train_f1 or 0.0) for e in history], marker="o", ms=3,
                       label="train")
        if any(e.dev_f1 is not None for e in history):
            ax_f1.plot(epochs, [100 * (e.dev_f1 or 0.0) for e in history], marker="s", ms=3,
                       label="dev")
        ax_f1.set_ylabel("span F1 (%)")
        ax_f1.set_xlabel("epoch")
        ax_f1.set_ylim(-2, 102)
        if ax_f1.lines:
            ax_f1.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_report(report, path, title=None):
    """Per-type F1 bars plus overall precision / recall / F1."""
    labels = list(ENTITY_TYPES) + ["P", "R", "F1"]
    values = [report.f1_of(t) for t in ENTITY_TYPES] + [report.precision, report.recall, report.f1]
    colors = ["0.55"] * len(ENTITY_TYPES) + ["tab:blue"] * 3
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        bars = ax.bar(labels, [100 * v for v in values], color=colors)
        for bar, v in zip(bars, values):
            ax.text(bar.get_x() + bar.get_width() / 2, 100 * v + 1, f"{100 * v:.1f}",
                    ha="center", va="bottom", fontsize=7)
        ax.set_ylim(0, 110)
        ax.set_ylabel("%")
        if title:
            ax.set_title(title)
        fig.savefig(path)
        plt.close(fig)
    return path
