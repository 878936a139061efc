from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from ..autodiff import Tensor
from ..autodiff.ops import _stable_sigmoid
from ..geometry.boxes import Box, decode_array
from ..geometry.nms import nms_indices
from .model import MaskRCNN
from .targets import HEAD_DELTA_STD, MIN_PROPOSAL_SIDE, propose
from .train import anchors_for


@dataclass
class Detection:
    box: Box
    score: float
    mask: np.ndarray = field(repr=False)  # (m, m) probabilities in the box frame
    full_mask: np.ndarray = field(repr=False)  # (H, W) bool, binarised and pasted


def _paste_axis(lo: float, hi: float, m: int, extent: int) -> np.ndarray:
    """(extent, m) bilinear weights mapping mask cells onto image pixels inside [lo, hi)."""
    centers = np.arange(extent) + 0.5
    inside = (centers >= lo) & (centers < hi)
    u = np.clip((centers - lo) / (hi - lo) * m - 0.5, 0.0, m - 1)
    u0 = np.floor(u).astype(np.int64)
    u1 = np.minimum(u0 + 1, m - 1)
    f = u - u0
    mat = np.zeros((extent, m))
    rows = np.arange(extent)
    np.add.at(mat, (rows, u0), 1.0 - f)
    np.add.at(mat, (rows, u1), f)
    mat[~inside] = 0.0
    return mat


def paste_mask(prob: np.ndarray, box: Box, shape, threshold: float = 0.5) -> np.ndarray:
    """Resample an (m, m) box-frame mask to the image and binarise at ``threshold``."""
    h, w = shape
    m = prob.shape[0]
    ay = _paste_axis(box.y1, box.y2, m, h)
    ax = _paste_axis(box.x1, box.x2, m, w)
    full = ay @ prob @ ax.T
    inside = ay.sum(axis=1)[:, None] * ax.sum(axis=1)[None, :] > 0
    return inside & (full >= threshold)


def detect_boxes(model: MaskRCNN, image: np.ndarray):
    """Scored, NMS-filtered boxes (K, 4), scores (K,) and the pyramid."""
    cfg = model.config
    _, height, width = image.shape
    pyramid = model.backbone_forward(Tensor(image[None]))
    logits, deltas, extents = model.rpn_forward(pyramid)
    anchors = anchors_for(model, extents)
    props, _ = propose(logits.data[0], deltas.data[0], anchors, (width, height), cfg, training=False)
    if len(props) == 0:
        return np.zeros((0, 4)), np.zeros(0), pyramid
    feats = model.pool(pyramid, props, np.zeros(len(props), dtype=np.int64), cfg.box_roi_size)
    cls_logits, box_deltas = model.box_head_forward(feats)
    scores = _stable_sigmoid(cls_logits.data)
    boxes = decode_array(props, box_deltas.data * HEAD_DELTA_STD, (width, height))
    ok = (
        (scores >= cfg.detection_min_score)
        & ((boxes[:, 2] - boxes[:, 0]) >= MIN_PROPOSAL_SIDE)
        & ((boxes[:, 3] - boxes[:, 1]) >= MIN_PROPOSAL_SIDE)
    )
    boxes, scores = boxes[ok], scores[ok]
    keep = nms_indices(boxes, scores, cfg.detection_nms, max_keep=cfg.max_instances)
    return boxes[keep], scores[keep], pyramid


def infer(model: MaskRCNN, image: np.ndarray) -> List[Detection]:
    """Detections for one (3, H, W) image, highest score first, at most ``max_instances``."""
    cfg = model.config
    _, height, width = image.shape
    boxes, scores, pyramid = detect_boxes(model, image)
    if len(boxes) == 0:
        return []
    feats = model.pool(pyramid, boxes, np.zeros(len(boxes), dtype=np.int64), cfg.roi_align_size)
    probs = _stable_sigmoid(model.mask_head_forward(feats).data[:, 0])
    out = []
    for row, score, prob in zip(boxes, scores, probs):
        box = Box.from_array(row, float(score))
        out.append(Detection(box, float(score), prob, paste_mask(prob, box, (height, width), cfg.mask_threshold)))
    return out
