"""Report figures.  Rendered with the Agg backend and without timestamps so
that reruns produce identical PNG bytes."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..corpus import CorpusStats  # noqa: E402
from ..taxonomy import Level2  # noqa: E402

_PNG_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def plot_label_distribution(stats: CorpusStats, path: str | Path) -> Path:
    labels = [l2.name_en for l2 in Level2]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(10, 4))
    ax.bar(x - 0.2, [stats.query_counts[l2] for l2 in Level2], 0.4, label="query")
    ax.bar(x + 0.2, [stats.response_counts[l2] for l2 in Level2], 0.4, label="response")
    ax.set_xticks(x, labels, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("segments")
    ax.legend()
    return _save(fig, path)


def plot_confusion(gold: Sequence[int], pred: Sequence[int], names: Sequence[str], path: str | Path,
                   title: str = "") -> Path:
    n = len(names)
    mat = np.zeros((n, n), dtype=np.int64)
    for g, p in zip(gold, pred):
        mat[g, p] += 1
    fig, ax = plt.subplots(figsize=(7, 6))
    im = ax.imshow(mat, cmap="Blues")
    ax.set_xticks(range(n), names, rotation=60, ha="right", fontsize=6)
    ax.set_yticks(range(n), names, fontsize=6)
    ax.set_xlabel("predicted")
    ax.set_ylabel("gold")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax)
    return _save(fig, path)


def plot_system_accuracy(acc: Mapping[str, float], path: str | Path) -> Path:
    names = list(acc)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(names, [acc[n] for n in names], color="tab:green")
    ax.set_ylim(0, 1)
    ax.set_ylabel("target-SF accuracy (proxy)")
    for i, n in enumerate(names):
        ax.text(i, acc[n] + 0.02, f"{acc[n]:.3f}", ha="center", fontsize=8)
    return _save(fig, path)
