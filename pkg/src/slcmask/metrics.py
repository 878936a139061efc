"""Recall and AP at box and mask level.

Matching is greedy and one-to-one at a single IoU threshold (0.5 by
default); AP integrates the all-point interpolated precision-recall curve
over the detections pooled across images and sorted by score.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .geometry.annotations import Annotation
from .geometry.boxes import boxes_to_array, iou_matrix

MATCH_IOU = 0.5


@dataclass(frozen=True)
class Match:
    score: float
    is_tp: bool
    gt_index: int = -1  # -1 for false positives


def mask_iou_matrix(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray]) -> np.ndarray:
    if not len(pred) or not len(gt):
        return np.zeros((len(pred), len(gt)))
    p = np.stack([m.reshape(-1) for m in pred]).astype(np.float64)
    g = np.stack([m.reshape(-1) for m in gt]).astype(np.float64)
    inter = p @ g.T
    union = p.sum(1)[:, None] + g.sum(1)[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def match_predictions(detections, ground_truth: Sequence[Annotation], iou_threshold: float = MATCH_IOU, mode: str = "box") -> List[Match]:
    """Greedy matching of score-sorted detections to ground truth.

    Each detection, in order, takes the unmatched ground truth instance with
    the highest IoU, provided that IoU is at least ``iou_threshold``; equal
    IoUs go to the lower ground-truth index.
    """
    if mode not in ("box", "mask"):
        raise ValueError(f"mode must be 'box' or 'mask', got {mode!r}")
    scores = [d.score for d in detections]
    if any(a < b for a, b in zip(scores, scores[1:])):
        raise ValueError("detections must be sorted by descending score")
    if mode == "box":
        ious = iou_matrix(boxes_to_array([d.box for d in detections]), boxes_to_array([g.box for g in ground_truth]))
    else:
        ious = mask_iou_matrix([d.full_mask for d in detections], [g.mask for g in ground_truth])
    taken = np.zeros(len(ground_truth), dtype=bool)
    out = []
    for i, det in enumerate(detections):
        best, best_j = -1.0, -1
        for j in range(len(ground_truth)):
            if not taken[j] and ious[i, j] >= iou_threshold and ious[i, j] > best:
                best, best_j = ious[i, j], j
        if best_j >= 0:
            taken[best_j] = True
        out.append(Match(float(det.score), best_j >= 0, best_j))
    return out


def _sorted_flags(matches: Sequence[Match]) -> np.ndarray:
    scores = np.array([m.score for m in matches], dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    return np.array([matches[i].is_tp for i in order], dtype=bool)


def precision_recall(matches: Sequence[Match], num_gt: int):
    flags = _sorted_flags(matches)
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / num_gt
    precision = tp / np.maximum(tp + fp, 1)
    return precision, recall


def average_precision(matches: Sequence[Match], num_gt: int) -> Optional[float]:
    """All-point interpolated AP in percent; ``None`` when ``num_gt`` is 0."""
    if num_gt <= 0:
        return None
    if not matches:
        return 0.0
    precision, recall = precision_recall(matches, num_gt)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(100.0 * np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def recall(matches: Sequence[Match], num_gt: int) -> Optional[float]:
    if num_gt <= 0:
        return None
    return float(100.0 * sum(m.is_tp for m in matches) / num_gt)


@dataclass
class MetricsReport:
    recall_mask: Optional[float]
    ap_mask: Optional[float]
    recall_box: Optional[float]
    ap_box: Optional[float]
    iou_threshold: float = MATCH_IOU
    num_gt: int = 0
    num_detections: int = 0
    label: str = ""
    extra: Dict[str, object] = field(default_factory=dict)

    COLUMNS = ("R(%)", "AP(%)", "R^bb(%)", "AP^bb(%)")

    def values(self):
        return (self.recall_mask, self.ap_mask, self.recall_box, self.ap_box)

    def to_row(self) -> Dict[str, object]:
        row = {"Network": self.label}
        row.update(zip(self.COLUMNS, (_fmt(v) for v in self.values())))
        return row


def _fmt(v: Optional[float]) -> str:
    return "n/a" if v is None else f"{v:.2f}"


def evaluate(detections_per_image, ground_truth_per_image, iou_threshold: float = MATCH_IOU, label: str = "") -> MetricsReport:
    """Pool matches over images and compute mask- and box-level R / AP."""
    box_matches: List[Match] = []
    mask_matches: List[Match] = []
    num_gt = 0
    num_det = 0
    for dets, gts in zip(detections_per_image, ground_truth_per_image):
        dets = sorted(dets, key=lambda d: -d.score)
        box_matches += match_predictions(dets, gts, iou_threshold, "box")
        mask_matches += match_predictions(dets, gts, iou_threshold, "mask")
        num_gt += len(gts)
        num_det += len(dets)
    return MetricsReport(
        recall(mask_matches, num_gt),
        average_precision(mask_matches, num_gt),
        recall(box_matches, num_gt),
        average_precision(box_matches, num_gt),
        iou_threshold,
        num_gt,
        num_det,
        label,
    )


def format_table(reports: Sequence[MetricsReport], title: str = "Network") -> str:
    """Aligned text table with the four metric columns."""
    header = (title,) + MetricsReport.COLUMNS
    rows = [(r.label,) + tuple(_fmt(v) for v in r.values()) for r in reports]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    line = lambda cells: "  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    return "\n".join([line(header), "-" * len(line(header))] + [line(r) for r in rows])
