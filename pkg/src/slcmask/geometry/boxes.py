"""Axis-aligned boxes in continuous pixel coordinates (x1, y1, x2, y2)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float
    score: Optional[float] = None

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(np.isfinite(coords)):
            raise ValueError(f"box coordinates must be finite, got {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"box must have positive area, got {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    def with_score(self, score: Optional[float]) -> "Box":
        return Box(self.x1, self.y1, self.x2, self.y2, score)

    def translate(self, dx: float, dy: float) -> "Box":
        return Box(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy, self.score)

    @classmethod
    def from_array(cls, arr, score: Optional[float] = None) -> "Box":
        x1, y1, x2, y2 = (float(v) for v in arr)
        return cls(x1, y1, x2, y2, score)


def boxes_to_array(boxes: Sequence[Box]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4))
    return np.array([[b.x1, b.y1, b.x2, b.y2] for b in boxes], dtype=np.float64)


def iou(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return out


# ------------------------------------------------------------- box deltas
def encode_deltas(anchor: Box, gt: Box) -> Tuple[float, float, float, float]:
    return tuple(float(v) for v in encode_array(anchor.as_array()[None], gt.as_array()[None])[0])


def decode_deltas(anchor: Box, deltas, image_extent: Optional[Tuple[float, float]] = None) -> Box:
    out = decode_array(anchor.as_array()[None], np.asarray(deltas, dtype=np.float64)[None], image_extent)[0]
    return Box.from_array(out)


def encode_array(anchors: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """(dx, dy, dw, dh) regressing ``anchors`` onto ``gt`` (both (N, 4))."""
    wa = anchors[:, 2] - anchors[:, 0]
    ha = anchors[:, 3] - anchors[:, 1]
    wg = gt[:, 2] - gt[:, 0]
    hg = gt[:, 3] - gt[:, 1]
    if (wa <= 0).any() or (ha <= 0).any() or (wg <= 0).any() or (hg <= 0).any():
        raise ValueError("encode_deltas: boxes must have positive width and height")
    cxa = anchors[:, 0] + 0.5 * wa
    cya = anchors[:, 1] + 0.5 * ha
    cxg = gt[:, 0] + 0.5 * wg
    cyg = gt[:, 1] + 0.5 * hg
    return np.stack([(cxg - cxa) / wa, (cyg - cya) / ha, np.log(wg / wa), np.log(hg / ha)], axis=1)


MAX_LOG_SCALE = np.log(1000.0 / 16.0)


def decode_array(anchors: np.ndarray, deltas: np.ndarray, image_extent=None) -> np.ndarray:
    """Inverse of :func:`encode_array`; clips to ``(W, H)`` when given."""
    wa = anchors[:, 2] - anchors[:, 0]
    ha = anchors[:, 3] - anchors[:, 1]
    if (wa <= 0).any() or (ha <= 0).any():
        raise ValueError("decode_deltas: anchors must have positive width and height")
    cx = anchors[:, 0] + 0.5 * wa + deltas[:, 0] * wa
    cy = anchors[:, 1] + 0.5 * ha + deltas[:, 1] * ha
    w = wa * np.exp(np.minimum(deltas[:, 2], MAX_LOG_SCALE))
    h = ha * np.exp(np.minimum(deltas[:, 3], MAX_LOG_SCALE))
    out = np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)
    if image_extent is not None:
        out = clip_boxes(out, image_extent)
    return out


def clip_boxes(boxes: np.ndarray, image_extent) -> np.ndarray:
    width, height = image_extent
    out = boxes.copy()
    out[:, 0::2] = np.clip(out[:, 0::2], 0.0, width)
    out[:, 1::2] = np.clip(out[:, 1::2], 0.0, height)
    return out


def mask_to_box(mask: np.ndarray) -> Optional[Box]:
    """Tight integer box around the True pixels of a 2-D mask."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return None
    return Box(float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))
