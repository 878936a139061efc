"""Instance scale / aspect-ratio distributions of a corpus."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..geometry.annotations import Annotation

RATIO_BIN = 0.25


@dataclass
class DatasetStats:
    count: int
    scale_edges: np.ndarray
    scale_counts: np.ndarray
    ratio_edges: np.ndarray
    ratio_counts: np.ndarray
    scales: np.ndarray
    ratios: np.ndarray

    def summary(self) -> str:
        lines = [f"instances: {self.count}"]
        lines.append(
            f"scale sqrt(w*h): min {self.scales.min():.1f}  median {np.median(self.scales):.1f}  max {self.scales.max():.1f}"
        )
        lines.append(f"elongation max/min: min {self.ratios.min():.2f}  max {self.ratios.max():.2f}")
        lines.append("scale histogram (half-octave bins):")
        for lo, hi, n in zip(self.scale_edges[:-1], self.scale_edges[1:], self.scale_counts):
            lines.append(f"  [{lo:7.1f}, {hi:7.1f})  {n}")
        lines.append("elongation histogram:")
        for lo, hi, n in zip(self.ratio_edges[:-1], self.ratio_edges[1:], self.ratio_counts):
            lines.append(f"  [{lo:5.2f}, {hi:5.2f})  {n}")
        return "\n".join(lines)


def dataset_stats(annotations: Iterable[Annotation]) -> DatasetStats:
    """Box scale (sqrt of area) on half-octave bins and elongation max(w,h)/min(w,h).

    Elongation is orientation-free, so a 32x16 and a 16x32 box both land at 2.0.
    """
    anns = list(annotations)
    if not anns:
        raise ValueError("dataset_stats needs a non-empty corpus")
    w = np.array([a.box.width for a in anns])
    h = np.array([a.box.height for a in anns])
    scales = np.sqrt(w * h)
    ratios = np.maximum(w, h) / np.minimum(w, h)
    lo = np.floor(2 * np.log2(scales.min())) / 2
    hi = np.floor(2 * np.log2(scales.max())) / 2 + 0.5
    scale_edges = 2.0 ** np.arange(lo, hi + 0.25, 0.5)
    scale_counts, _ = np.histogram(scales, bins=scale_edges)
    top = 1.0 + RATIO_BIN * (np.floor((ratios.max() - 1.0) / RATIO_BIN) + 1)
    ratio_edges = np.arange(1.0, top + RATIO_BIN / 2, RATIO_BIN)
    ratio_counts, _ = np.histogram(ratios, bins=ratio_edges)
    return DatasetStats(len(anns), scale_edges, scale_counts, ratio_edges, ratio_counts, scales, ratios)
