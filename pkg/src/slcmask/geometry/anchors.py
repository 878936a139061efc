"""Per-level anchor templates placed on feature-map grids."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .boxes import Box

DEFAULT_BASE_SCALES = (32, 64, 128, 256, 512)
DEFAULT_STRIDES = (4, 8, 16, 32, 64)
DEFAULT_SCALE_MULTIPLIERS = (1.0, 0.707)
DEFAULT_ASPECT_RATIOS = (0.5, 1.0, 1.5)


@dataclass(frozen=True)
class AnchorSet:
    """Anchor geometry; ``aspect_ratios`` are width / height."""

    strides: Tuple[int, ...] = DEFAULT_STRIDES
    base_scales: Tuple[float, ...] = DEFAULT_BASE_SCALES
    scale_multipliers: Tuple[float, ...] = DEFAULT_SCALE_MULTIPLIERS
    aspect_ratios: Tuple[float, ...] = DEFAULT_ASPECT_RATIOS

    def __post_init__(self):
        if len(self.strides) != len(self.base_scales):
            raise ValueError("one stride per base scale is required")
        for lo, hi in zip(self.base_scales, self.base_scales[1:]):
            if not np.isclose(hi, 2 * lo):
                raise ValueError(f"base scales must double per level, got {self.base_scales}")

    @property
    def levels(self) -> List[Tuple[int, float]]:
        return list(zip(self.strides, self.base_scales))

    @property
    def per_location(self) -> int:
        return len(self.scale_multipliers) * len(self.aspect_ratios)

    def templates(self, base_scale: float) -> np.ndarray:
        """(A, 2) array of (width, height) in ratio-major, multiplier-minor order."""
        out = []
        for ratio in self.aspect_ratios:
            for mult in self.scale_multipliers:
                side = mult * base_scale
                out.append((side * np.sqrt(ratio), side / np.sqrt(ratio)))
        return np.array(out, dtype=np.float64)


def generate_anchor_array(spec: AnchorSet, feature_extents: Sequence[Tuple[int, int]]) -> List[np.ndarray]:
    """Per-level (h * w * A, 4) anchor arrays ordered row -> col -> ratio -> multiplier."""
    if len(feature_extents) != len(spec.strides):
        raise ValueError(f"expected {len(spec.strides)} feature extents, got {len(feature_extents)}")
    levels = []
    for (stride, base), (fh, fw) in zip(spec.levels, feature_extents):
        wh = spec.templates(base)
        cy = (np.arange(fh) + 0.5) * stride
        cx = (np.arange(fw) + 0.5) * stride
        cyy, cxx = np.meshgrid(cy, cx, indexing="ij")
        centers = np.stack([cxx.ravel(), cyy.ravel()], axis=1)  # row-major
        c = centers[:, None, :]
        half = 0.5 * wh[None, :, :]
        boxes = np.concatenate([c - half, c + half], axis=2).reshape(-1, 4)
        levels.append(boxes)
    return levels


def generate_anchors(spec: AnchorSet, feature_extents: Sequence[Tuple[int, int]]) -> List[Box]:
    return [Box.from_array(row) for level in generate_anchor_array(spec, feature_extents) for row in level]
