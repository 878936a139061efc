"""Joint RPN + box head + mask head training."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..autodiff import (
    SGD,
    NumericalError,
    Tensor,
    add_all,
    bce_with_logits,
    clip_grad_norm,
    reshape,
    smooth_l1_loss,
    take_rows,
)
from ..data.augment import AugmentPolicy, augment
from ..data.corpus import Sample
from ..geometry.anchors import generate_anchor_array
from .config import PipelineConfig
from .model import MaskRCNN
from .targets import gt_boxes, propose, rpn_targets, sample_rois

logger = logging.getLogger(__name__)

LOSS_TERMS = ("loss_rpn_cls", "loss_rpn_box", "loss_cls", "loss_box", "loss_mask")
LOG_COLUMNS = ("epoch", "iter") + LOSS_TERMS + ("total",)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, term: str, detail: str):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}, term {term}: {detail}")
        self.epoch, self.batch, self.term = epoch, batch, term


@dataclass
class TrainResult:
    model: MaskRCNN
    log: List[Dict[str, float]] = field(default_factory=list)
    epoch_losses: List[float] = field(default_factory=list)


def anchors_for(model: MaskRCNN, extents) -> np.ndarray:
    return np.concatenate(generate_anchor_array(model.config.anchors, extents), axis=0)


class _Stage:
    """Remembers which loss term is being built, for divergence diagnostics."""

    name = "forward"


def compute_losses(model: MaskRCNN, images: np.ndarray, annotations: Sequence[Sequence], rng, stage=None):
    """Scalar total loss plus the per-term values for one batch."""
    stage = stage or _Stage()
    cfg = model.config
    n, _, height, width = images.shape
    stage.name = "backbone"
    pyramid = model.backbone_forward(Tensor(images))
    stage.name = "loss_rpn_cls"
    logits, deltas, extents = model.rpn_forward(pyramid)
    anchors = anchors_for(model, extents)
    a = anchors.shape[0]

    cls_idx, cls_lab, box_idx, box_tgt = [], [], [], []
    for b in range(n):
        sampled, labels, pos, tgt = rpn_targets(anchors, gt_boxes(annotations[b]), cfg, rng)
        cls_idx.append(sampled + b * a)
        cls_lab.append(labels)
        box_idx.append(pos + b * a)
        box_tgt.append(tgt)
    terms: Dict[str, Tensor] = {}
    flat_logits = reshape(logits, (n * a,))
    terms["loss_rpn_cls"] = bce_with_logits(take_rows(flat_logits, np.concatenate(cls_idx)), np.concatenate(cls_lab))
    stage.name = "loss_rpn_box"
    box_idx_all = np.concatenate(box_idx)
    if box_idx_all.size:
        flat_deltas = reshape(deltas, (n * a, 4))
        terms["loss_rpn_box"] = smooth_l1_loss(take_rows(flat_deltas, box_idx_all), np.concatenate(box_tgt))

    stage.name = "loss_cls"
    rois, batch_idx, labels, pos_rows, pos_deltas, mask_tgt = [], [], [], [], [], []
    offset = 0
    for b in range(n):
        props, _ = propose(logits.data[b], deltas.data[b], anchors, (width, height), cfg, training=True)
        sample = sample_rois(props, annotations[b], cfg, rng)
        r = len(sample.labels)
        rois.append(sample.boxes)
        batch_idx.append(np.full(r, b))
        labels.append(sample.labels)
        pos_rows.append(offset + np.arange(sample.num_positive))
        pos_deltas.append(sample.deltas)
        mask_tgt.append(sample.mask_targets)
        offset += r
    rois_all = np.concatenate(rois)
    bidx = np.concatenate(batch_idx)
    pos_rows = np.concatenate(pos_rows).astype(np.int64)
    feats = model.pool(pyramid, rois_all, bidx, cfg.box_roi_size)
    cls_logits, box_deltas = model.box_head_forward(feats)
    terms["loss_cls"] = bce_with_logits(cls_logits, np.concatenate(labels))
    if pos_rows.size:
        stage.name = "loss_box"
        terms["loss_box"] = smooth_l1_loss(take_rows(box_deltas, pos_rows), np.concatenate(pos_deltas))
        stage.name = "loss_mask"
        mfeats = model.pool(pyramid, rois_all[pos_rows], bidx[pos_rows], cfg.roi_align_size)
        mlogits = model.mask_head_forward(mfeats)
        m = cfg.mask_size
        terms["loss_mask"] = bce_with_logits(reshape(mlogits, (pos_rows.size, m, m)), np.concatenate(mask_tgt))
    stage.name = "total"
    total = add_all([terms[k] for k in LOSS_TERMS if k in terms])
    values = {k: (terms[k].item() if k in terms else 0.0) for k in LOSS_TERMS}
    values["total"] = total.item()
    return total, values


def _batch(samples: Sequence[Sample], idx, policy: Optional[AugmentPolicy], epoch: int):
    images, anns = [], []
    for i in idx:
        s = samples[i]
        if policy is not None:
            img, a, _ = augment(s.image, s.annotations, policy, seed=(epoch << 20) + int(i))
        else:
            img, a = s.image, s.annotations
        images.append(img)
        anns.append(a)
    return np.stack(images), anns


def train(
    samples: Sequence[Sample],
    config: PipelineConfig,
    seed: int = 0,
    policy: Optional[AugmentPolicy] = None,
    epochs: Optional[int] = None,
    on_epoch: Optional[Callable[[int, float], None]] = None,
    model: Optional[MaskRCNN] = None,
) -> TrainResult:
    """SGD over ``samples`` for ``epochs`` (default ``config.epochs``).

    The epoch loss is the mean total loss over that epoch's batches, each
    measured before its own update.
    """
    if not samples:
        raise ValueError("train() needs at least one sample")
    model = model or MaskRCNN(config, seed)
    params = model.parameters()
    opt = SGD(params, lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay)
    epochs = config.epochs if epochs is None else epochs
    result = TrainResult(model)
    bs = config.batch_size
    stage = _Stage()
    for epoch in range(epochs):
        order = np.random.default_rng([seed, epoch, 1]).permutation(len(samples))
        totals = []
        for it, start in enumerate(range(0, len(order), bs)):
            idx = order[start : start + bs]
            images, anns = _batch(samples, idx, policy, epoch)
            rng = np.random.default_rng([seed, epoch, it, 2])
            try:
                total, values = compute_losses(model, images, anns, rng, stage)
                stage.name = "backward"
                total.backward()
            except NumericalError as exc:
                raise TrainingDiverged(epoch, it, stage.name, str(exc)) from exc
            if not np.isfinite(values["total"]):
                raise TrainingDiverged(epoch, it, "total", "loss is not finite")
            if config.clip_grad > 0:
                clip_grad_norm(params, config.clip_grad)
            for p in params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            opt.step()
            opt.zero_grad()
            row = {"epoch": epoch, "iter": it, **values}
            result.log.append(row)
            totals.append(values["total"])
        mean = float(np.mean(totals))
        result.epoch_losses.append(mean)
        logger.info("epoch %d: loss %.4f", epoch, mean)
        if on_epoch is not None:
            on_epoch(epoch, mean)
    return result


def write_loss_log(path: str, log: Sequence[Dict[str, float]], header: Sequence[str] = ()) -> None:
    """CSV with one row per batch; ``header`` lines are written first as ``#`` comments."""
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for row in log:
            writer.writerow([row["epoch"], row["iter"]] + [f"{row[k]:.10g}" for k in LOG_COLUMNS[2:]])
