"""
Balanced accuracy and summary statistics of explanation masks.

Examples:
    >>> balanced_accuracy([0, 1, 1, 2], [0, 1, 2, 2], class_count=3)
    0.8333333333333334

    >>> from wyr.masking import SoftMask
    >>> stats = mask_statistics([SoftMask.from_values([1, 1, 0, 0, 1])])
    >>> stats.chunk_counts.tolist(), stats.chunk_lengths.tolist()
    ([2], [2, 1])
    >>> stats.mean, stats.fraction_above
    (0.6, 0.6)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

from wyr.masking import DEFAULT_THRESHOLD, SoftMask, round_mask, segment_chunks

logger = logging.getLogger(__name__)

CONDITIONS = (
    "unmasked",
    "masked",
    "inverted",
    "rounded",
    "inverted-rounded",
    "relevant-chunks",
    "irrelevant-chunks",
)

# Published values at corpus scale (percent), for annotation next to desk-scale results.
REFERENCE_HEADS = ("superkingdom", "phylum", "genus")
REFERENCE_ACCURACY = {
    "unmasked": (99.05, 97.39, 71.67),
    "masked": (98.39, 95.51, 69.88),
    "inverted": (46.70, 28.21, 5.71),
    "rounded": (76.42, 52.6, 40.86),
    "inverted-rounded": (44.85, 26.20, 4.92),
    "relevant-chunks": (69.98, 49.92, 36.32),
    "irrelevant-chunks": (47.13, 31.68, 9.58),
}
REFERENCE_STATISTICS = {
    "mean": 0.73,
    "fraction_above": 0.6728,
    "mean_chunk_count": 3.35,
    "mean_chunk_length": 51.39,
}


def argmax_lowest(probs: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest index."""
    return np.argmax(np.asarray(probs), axis=-1)


def balanced_accuracy(
    predictions: Sequence[int], labels: Sequence[int], class_count: int
) -> float:
    """
    Mean per-class recall over the classes present in `labels`.

    Raises:
        ValueError: for empty or unequal-length inputs
        IndexError: for a label outside `[0, class_count)`

    Examples:
        >>> balanced_accuracy([0, 0, 1], [0, 0, 1], class_count=5)
        1.0
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("balanced accuracy of an empty set")
    if predictions.shape != labels.shape:
        raise ValueError(f"{predictions.size} predictions for {labels.size} labels")
    if labels.min() < 0 or labels.max() >= class_count:
        raise IndexError(f"labels must lie in [0, {class_count})")
    matrix = confusion_matrix(labels, predictions, labels=np.arange(class_count))
    support = matrix.sum(axis=1)
    present = support > 0
    recalls = np.diag(matrix)[present] / support[present]
    return float(recalls.mean())


@dataclass
class MaskStatistics:
    """
    Attributes:
        mean: mean mask value over valid positions
        fraction_above: share of valid positions whose value reaches the threshold
        threshold: the rounding threshold
        histogram: counts per bin; the bins partition [0, 1]
        bin_edges: `len(histogram) + 1` edges from 0 to 1
        profile: per-position `count`, `mean`, `std`, `min`, `max` over the items long enough
            to reach that position
        chunk_counts: unmasked chunks (runs of rounded value 1) per item
        chunk_lengths: lengths of all unmasked chunks
    """

    mean: float
    fraction_above: float
    threshold: float
    histogram: np.ndarray
    bin_edges: np.ndarray
    profile: pd.DataFrame
    chunk_counts: np.ndarray
    chunk_lengths: np.ndarray

    @property
    def items(self) -> int:
        return int(self.chunk_counts.size)

    @property
    def mean_chunk_count(self) -> float:
        return float(self.chunk_counts.mean())

    @property
    def mean_chunk_length(self) -> float:
        return float(self.chunk_lengths.mean()) if self.chunk_lengths.size else 0.0

    def histogram_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"low": self.bin_edges[:-1], "high": self.bin_edges[1:], "count": self.histogram}
        )

    def chunk_frame(self) -> pd.DataFrame:
        counts = np.bincount(self.chunk_counts) if self.chunk_counts.size else np.zeros(0)
        return pd.DataFrame({"chunks": np.arange(counts.size), "items": counts})

    def summary(self) -> Dict[str, float]:
        return {
            "mean": self.mean,
            "fraction_above": self.fraction_above,
            "threshold": self.threshold,
            "items": self.items,
            "mean_chunk_count": self.mean_chunk_count,
            "mean_chunk_length": self.mean_chunk_length,
        }

    def to_dict(self) -> dict:
        return {
            **self.summary(),
            "histogram": self.histogram.tolist(),
            "bin_edges": self.bin_edges.tolist(),
            "profile": {column: self.profile[column].tolist() for column in self.profile},
            "chunk_counts": self.chunk_counts.tolist(),
            "chunk_lengths": self.chunk_lengths.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MaskStatistics":
        return cls(
            mean=payload["mean"],
            fraction_above=payload["fraction_above"],
            threshold=payload["threshold"],
            histogram=np.asarray(payload["histogram"], dtype=np.int64),
            bin_edges=np.asarray(payload["bin_edges"], dtype=np.float64),
            profile=pd.DataFrame(payload["profile"]),
            chunk_counts=np.asarray(payload["chunk_counts"], dtype=np.int64),
            chunk_lengths=np.asarray(payload["chunk_lengths"], dtype=np.int64),
        )

    def write_csv(self, directory: Union[str, Path]) -> List[Path]:
        """Write `histogram.csv`, `profile.csv` and `chunks.csv` for external plotting."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = [directory / name for name in ("histogram.csv", "profile.csv", "chunks.csv")]
        self.histogram_frame().to_csv(paths[0], index=False)
        self.profile.to_csv(paths[1], index=False)
        self.chunk_frame().to_csv(paths[2], index=False)
        return paths


def _rows(masks: Sequence[SoftMask]) -> List[np.ndarray]:
    return [m.row(i) for m in masks for i in range(len(m))]


def mask_statistics(
    masks: Sequence[SoftMask], threshold: float = DEFAULT_THRESHOLD, bins: int = 10
) -> MaskStatistics:
    """
    Statistics over the valid positions of every row of every mask.

    Raises:
        ValueError: for no masks, or masks without any valid position
    """
    if bins < 1:
        raise ValueError(f"bins must be at least 1, got {bins}")
    rows = _rows(masks)
    if not rows or sum(r.size for r in rows) == 0:
        raise ValueError("mask statistics need at least one valid mask value")
    values = np.concatenate(rows)
    edges = np.linspace(0.0, 1.0, bins + 1)
    histogram, _ = np.histogram(values, bins=edges)

    length = max(r.size for r in rows)
    padded = np.full((len(rows), length), np.nan)
    for i, row in enumerate(rows):
        padded[i, : row.size] = row
    count = np.sum(~np.isnan(padded), axis=0)
    with np.errstate(invalid="ignore"):
        profile = pd.DataFrame(
            {
                "position": np.arange(length),
                "count": count,
                "mean": np.nanmean(padded, axis=0),
                "std": np.nanstd(padded, axis=0),
                "min": np.nanmin(padded, axis=0),
                "max": np.nanmax(padded, axis=0),
            }
        )

    chunk_counts, chunk_lengths = [], []
    for m in masks:
        for segmentation in segment_chunks(round_mask(m, threshold)):
            lengths = segmentation.lengths(True)
            chunk_counts.append(len(lengths))
            chunk_lengths.extend(lengths)

    return MaskStatistics(
        mean=float(values.mean()),
        fraction_above=float(np.mean(values >= threshold)),
        threshold=threshold,
        histogram=histogram.astype(np.int64),
        bin_edges=edges,
        profile=profile,
        chunk_counts=np.asarray(chunk_counts, dtype=np.int64),
        chunk_lengths=np.asarray(chunk_lengths, dtype=np.int64),
    )


def plot_mask_statistics(stats: MaskStatistics, path: Optional[Union[str, Path]] = None):
    """Histogram of mask values and the positional mean with std and min/max envelopes."""
    import matplotlib.pyplot as plt

    fig, (ax_hist, ax_profile) = plt.subplots(1, 2, figsize=(11, 4))
    centres = (stats.bin_edges[:-1] + stats.bin_edges[1:]) / 2
    width = np.diff(stats.bin_edges)
    ax_hist.bar(centres, stats.histogram, width=width, color="tab:green", edgecolor="white")
    ax_hist.axvline(stats.threshold, color="black", linestyle="--", linewidth=1)
    ax_hist.set_xlabel("mask value")
    ax_hist.set_ylabel("tokens")
    ax_hist.set_title(f"mean {stats.mean:.2f}, {100 * stats.fraction_above:.1f}% above")

    profile = stats.profile
    x = profile["position"]
    ax_profile.fill_between(x, profile["min"], profile["max"], color="tab:green", alpha=0.15)
    ax_profile.fill_between(
        x, profile["mean"] - profile["std"], profile["mean"] + profile["std"],
        color="tab:green", alpha=0.35,
    )
    ax_profile.plot(x, profile["mean"], color="tab:green")
    ax_profile.set_ylim(0, 1)
    ax_profile.set_xlabel("token position")
    ax_profile.set_ylabel("mask value")
    fig.tight_layout()
    if path is not None:
        fig.savefig(path)
        plt.close(fig)
    return fig
