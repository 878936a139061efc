from __future__ import annotations

from typing import List, Sequence

import numpy as np

from .boxes import Box, boxes_to_array, iou_matrix


def nms_indices(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float, max_keep: int = None) -> np.ndarray:
    """Greedy NMS over arrays; returns kept indices in selection order.

    Candidates are visited by descending score, lower index first on ties. A
    candidate is dropped iff its IoU with an already kept box exceeds
    ``iou_threshold``.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    n = boxes.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(n), -scores))
    x1, y1, x2, y2 = boxes.T
    areas = (x2 - x1) * (y2 - y1)
    suppressed = np.zeros(n, dtype=bool)
    keep = []
    for pos, i in enumerate(order):
        if suppressed[i]:
            continue
        keep.append(i)
        if max_keep is not None and len(keep) >= max_keep:
            break
        rest = order[pos + 1 :]
        rest = rest[~suppressed[rest]]
        if rest.size == 0:
            break
        iw = np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest])
        ih = np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest])
        inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
        ious = inter / (areas[i] + areas[rest] - inter)
        suppressed[rest[ious > iou_threshold]] = True
    return np.asarray(keep, dtype=np.int64)


def nms(boxes: Sequence[Box], iou_threshold: float) -> List[Box]:
    """Greedy NMS on scored :class:`Box` objects; kept boxes are returned as-is."""
    if any(b.score is None for b in boxes):
        raise ValueError("nms: every box needs a score")
    if not boxes:
        return []
    keep = nms_indices(boxes_to_array(boxes), np.array([b.score for b in boxes]), iou_threshold)
    return [boxes[i] for i in keep]


def pairwise_max_iou(boxes: np.ndarray) -> float:
    m = iou_matrix(boxes, boxes)
    np.fill_diagonal(m, 0.0)
    return float(m.max()) if m.size else 0.0
