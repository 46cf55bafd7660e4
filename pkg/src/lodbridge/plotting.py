"""Figures for MQA results, written to image files (Agg backend, no display)."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .mqa import DIMENSIONS, DistributionReport, ScoreReport  # noqa: E402

_RATING_COLORS = {"excellent": "#1a9850", "good": "#91cf60", "sufficient": "#fee08b", "bad": "#d73027"}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None} if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def plot_dimension_scores(reports: Sequence[ScoreReport], path: str | Path) -> Path:
    """Grouped bars: points per dimension for each dataset, against the dimension maximum."""
    if not reports:
        raise ValueError("nothing to plot")
    dims = [d for d in DIMENSIONS if d in reports[0].max_per_dimension]
    fig, ax = plt.subplots(figsize=(max(6, 1.6 * len(dims)), 4))
    width = 0.8 / len(reports)
    for i, rep in enumerate(reports):
        xs = [j + i * width for j in range(len(dims))]
        ax.bar(xs, [rep.per_dimension[d] for d in dims], width, label=rep.dataset.rsplit("/", 1)[-1])
    ax.scatter([j + 0.4 - width / 2 for j in range(len(dims))], [reports[0].max_per_dimension[d] for d in dims],
               marker="_", s=600, color="black", label="maximum")
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(dims))], dims)
    ax.set_ylabel("points")
    ax.set_title("Metadata quality by dimension")
    ax.legend(fontsize="small")
    return _save(fig, path)


def plot_rating_distribution(dist: DistributionReport, path: str | Path) -> Path:
    labels = list(dist.counts)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    bars = ax.bar(labels, [dist.percentages[r] for r in labels], color=[_RATING_COLORS[r] for r in labels])
    for bar, r in zip(bars, labels):
        ax.annotate(f"{dist.percentages[r]:.3f}%\n({dist.counts[r]})", (bar.get_x() + bar.get_width() / 2,
                    bar.get_height()), ha="center", va="bottom", fontsize="small")
    ax.set_ylabel("% of datasets")
    ax.set_ylim(0, max(100, max(dist.percentages.values(), default=0) * 1.2))
    ax.set_title(f"Rating distribution over {dist.total} datasets")
    return _save(fig, path)
