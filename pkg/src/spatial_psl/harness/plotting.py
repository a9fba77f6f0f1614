"""PNG figures for the report and sweep commands."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_SAVE = {"dpi": 100, "metadata": {"Software": None}}


def plot_report(rows, path) -> Path:
    """Bar chart of test accuracy per architecture, annotated with the change over baseline.

    Args:
        rows: ``(architecture, accuracy, delta)`` tuples.
    """
    names = [r[0] for r in rows]
    acc = [100 * r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    bars = ax.bar(range(len(rows)), acc, color=["#888888"] + ["#3b6ea8"] * (len(rows) - 1))
    for bar, (_, _, delta) in zip(bars, rows):
        label = f"{100 * delta:+.1f}" if bar is not bars[0] else "base"
        ax.annotate(label, (bar.get_x() + bar.get_width() / 2, bar.get_height()), ha="center", va="bottom", fontsize=8)
    ax.set_xticks(range(len(rows)), names, rotation=15, fontsize=8)
    ax.set_ylabel("test accuracy (%)")
    ax.set_ylim(0, 100)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def plot_traces(traces: dict, path, split: str = "val") -> Path:
    """Per-epoch accuracy curves of several runs on one split."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, trace in traces.items():
        rows = [r for r in trace if r["split"] == split]
        ax.plot([r["epoch"] for r in rows], [100 * r["accuracy"] for r in rows], label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel(f"{split} accuracy (%)")
    if traces:
        ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def plot_sweep(pis, accuracies, path, baseline: float | None = None) -> Path:
    """Test accuracy of distilled students against the imitation parameter."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(pis, [100 * a for a in accuracies], marker="o", label="student")
    if baseline is not None:
        ax.axhline(100 * baseline, color="#888888", linestyle="--", label="baseline")
        ax.legend(fontsize=8)
    ax.set_xlabel("imitation parameter π")
    ax.set_ylabel("test accuracy (%)")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path
