"""Anchor labelling, proposal generation and RoI sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..autodiff.ops import _stable_sigmoid
from ..autodiff.roi import crop_and_resize
from ..geometry.annotations import Annotation
from ..geometry.boxes import boxes_to_array, decode_array, encode_array, iou_matrix
from ..geometry.nms import nms_indices

RPN_DELTA_STD = np.array([0.1, 0.1, 0.2, 0.2])
HEAD_DELTA_STD = np.array([0.1, 0.1, 0.2, 0.2])
MIN_PROPOSAL_SIDE = 1.0


def gt_boxes(annotations: Sequence[Annotation]) -> np.ndarray:
    return boxes_to_array([a.box for a in annotations])


# ------------------------------------------------------------------- rpn
def rpn_targets(anchors: np.ndarray, gt: np.ndarray, config, rng: np.random.Generator):
    """Sampled anchor indices, their labels and positive regression targets.

    Returns ``(sampled, labels, positive, deltas)`` where ``positive`` indexes
    into ``anchors`` and ``deltas`` are std-normalised encodings.
    """
    n = anchors.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    if gt.shape[0] == 0:
        labels[:] = 0
        matched = np.zeros(n, dtype=np.int64)
    else:
        ious = iou_matrix(anchors, gt)
        best = ious.max(axis=1)
        matched = ious.argmax(axis=1)
        labels[best < config.rpn_negative_iou] = 0
        labels[best >= config.rpn_positive_iou] = 1
        gt_best = ious.max(axis=0)
        for j in range(gt.shape[0]):
            if gt_best[j] > 0:
                labels[(ious[:, j] == gt_best[j])] = 1
    total = config.rpn_anchors_per_image
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    n_pos = min(len(pos), total // 2)
    pos = rng.choice(pos, n_pos, replace=False) if n_pos < len(pos) else pos
    n_neg = min(len(neg), total - n_pos)
    neg = rng.choice(neg, n_neg, replace=False) if n_neg < len(neg) else neg
    pos, neg = np.sort(pos), np.sort(neg)
    sampled = np.concatenate([pos, neg])
    sampled_labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    deltas = np.zeros((len(pos), 4))
    if len(pos):
        deltas = encode_array(anchors[pos], gt[matched[pos]]) / RPN_DELTA_STD
    return sampled, sampled_labels, pos, deltas


def propose(logits: np.ndarray, deltas: np.ndarray, anchors: np.ndarray, image_extent, config, training: bool):
    """Decode, clip, NMS and cap one image's proposals (highest score first)."""
    scores = _stable_sigmoid(logits)
    top = min(config.rpn_pre_nms, scores.size)
    order = np.lexsort((np.arange(scores.size), -scores))[:top]
    boxes = decode_array(anchors[order], deltas[order] * RPN_DELTA_STD, image_extent)
    scores = scores[order]
    ok = ((boxes[:, 2] - boxes[:, 0]) >= MIN_PROPOSAL_SIDE) & ((boxes[:, 3] - boxes[:, 1]) >= MIN_PROPOSAL_SIDE)
    boxes, scores = boxes[ok], scores[ok]
    cap = config.train_rois if training else config.infer_rois
    keep = nms_indices(boxes, scores, config.rpn_nms, max_keep=cap)
    return boxes[keep], scores[keep]


# -------------------------------------------------------------- roi sampling
@dataclass
class RoiSample:
    boxes: np.ndarray  # (R, 4) positives first
    labels: np.ndarray  # (R,) 1 = ship, 0 = background
    num_positive: int
    deltas: np.ndarray  # (P, 4) std-normalised targets of positives
    mask_targets: np.ndarray  # (P, mask_size, mask_size) in {0, 1}
    matched_gt: np.ndarray  # (P,)


def split_counts(total: int, pos_avail: int, neg_avail: int, positive_ratio=(1, 2)):
    """Positive and negative counts for one image.

    The positive quota is ``ceil(total * p / (p + n))``. A short pool is
    topped up from the other one, so the result sums to
    ``min(total, pos_avail + neg_avail)``.
    """
    p, q = positive_ratio
    quota = math.ceil(total * p / (p + q))
    n_pos = min(pos_avail, quota)
    n_neg = min(neg_avail, total - n_pos)
    n_pos = min(pos_avail, total - n_neg)
    return n_pos, n_neg


def sample_rois(
    proposals: np.ndarray,
    annotations: Sequence[Annotation],
    config,
    rng: np.random.Generator,
    add_gt: bool = True,
) -> RoiSample:
    gt = gt_boxes(annotations)
    candidates = proposals
    if add_gt and gt.shape[0]:
        candidates = np.concatenate([proposals, gt], axis=0)
    if gt.shape[0]:
        ious = iou_matrix(candidates, gt)
        best = ious.max(axis=1)
        matched = ious.argmax(axis=1)
    else:
        best = np.zeros(len(candidates))
        matched = np.zeros(len(candidates), dtype=np.int64)
    pos_pool = np.flatnonzero(best >= config.roi_positive_iou)
    neg_pool = np.flatnonzero(best < config.roi_positive_iou)
    n_pos, n_neg = split_counts(config.rois_per_image, len(pos_pool), len(neg_pool), config.positive_ratio)
    pos = np.sort(rng.choice(pos_pool, n_pos, replace=False)) if n_pos else np.zeros(0, dtype=np.int64)
    neg = np.sort(rng.choice(neg_pool, n_neg, replace=False)) if n_neg else np.zeros(0, dtype=np.int64)
    keep = np.concatenate([pos, neg]).astype(np.int64)
    boxes = candidates[keep]
    labels = np.concatenate([np.ones(n_pos), np.zeros(n_neg)])
    m = config.mask_size
    if n_pos:
        g = matched[pos]
        deltas = encode_array(candidates[pos], gt[g]) / HEAD_DELTA_STD
        mask_targets = np.stack(
            [crop_and_resize(annotations[j].mask, candidates[i], m)[0] >= 0.5 for i, j in zip(pos, g)]
        ).astype(np.float64)
    else:
        g = np.zeros(0, dtype=np.int64)
        deltas = np.zeros((0, 4))
        mask_targets = np.zeros((0, m, m))
    return RoiSample(boxes, labels, n_pos, deltas, mask_targets, g)
