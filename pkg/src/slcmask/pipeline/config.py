from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Tuple

from ..autodiff.optim import DEFAULT_LR, DEFAULT_MOMENTUM, DEFAULT_WEIGHT_DECAY
from ..geometry.anchors import AnchorSet
from ..slc import SlcConfig

# Proposal and sampling counts of the adopted two-stage protocol.
TRAIN_ROIS = 2000
INFER_ROIS = 1000
ROIS_PER_IMAGE = 200
POSITIVE_RATIO = (1, 2)
MAX_INSTANCES = 100
EPOCHS = 25


@dataclass(frozen=True)
class PipelineConfig:
    backbone_channels: Tuple[int, ...] = (16, 32, 64, 64)
    backbone_strides: Tuple[int, ...] = (2, 2, 2, 2)
    pyramid_stages: Tuple[int, ...] = (2, 3, 4)
    fpn_channels: int = 32
    anchors: AnchorSet = field(default_factory=AnchorSet)
    rpn_pre_nms: int = 6000
    rpn_nms: float = 0.7
    train_rois: int = TRAIN_ROIS
    infer_rois: int = INFER_ROIS
    rpn_anchors_per_image: int = 256
    rpn_positive_iou: float = 0.7
    rpn_negative_iou: float = 0.3
    rois_per_image: int = ROIS_PER_IMAGE
    positive_ratio: Tuple[int, int] = POSITIVE_RATIO
    roi_positive_iou: float = 0.5
    max_instances: int = MAX_INSTANCES
    detection_nms: float = 0.3
    detection_min_score: float = 0.05
    box_roi_size: int = 7
    roi_align_size: int = 14
    mask_size: int = 28
    mask_head_convs: int = 4
    mask_channels: int = 16
    box_hidden: int = 64
    mask_threshold: float = 0.5
    slc: SlcConfig = SlcConfig()
    epochs: int = EPOCHS
    lr: float = DEFAULT_LR
    momentum: float = DEFAULT_MOMENTUM
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    batch_size: int = 1
    clip_grad: float = 0.0

    def __post_init__(self):
        positive = (
            self.fpn_channels,
            self.train_rois,
            self.infer_rois,
            self.rois_per_image,
            self.max_instances,
            self.roi_align_size,
            self.mask_size,
            self.mask_channels,
            self.epochs,
            self.batch_size,
            self.rpn_anchors_per_image,
        )
        if min(positive) <= 0 or min(self.backbone_channels) <= 0:
            raise ValueError("counts and sizes in PipelineConfig must be positive")
        if len(self.backbone_channels) != len(self.backbone_strides):
            raise ValueError("one stride per backbone stage is required")
        if sum(self.positive_ratio) <= 0 or min(self.positive_ratio) < 0:
            raise ValueError(f"invalid positive:negative ratio {self.positive_ratio}")
        if self.mask_size != 2 * self.roi_align_size:
            raise ValueError("mask_size must be twice roi_align_size (one 2x upsample)")
        if not 2 <= len(self.pyramid_stages) <= 3:
            raise ValueError("the backbone pyramid has 2 or 3 levels")
        strides = tuple(self.anchors.strides)
        n = len(self.feature_strides)
        extra_ok = all(b == 2 * a for a, b in zip(strides[n - 1 :], strides[n:]))
        if strides[:n] != self.feature_strides or not extra_ok:
            raise ValueError(
                f"anchor strides {strides} must start with the pyramid strides {self.feature_strides} "
                "and double for every extra level"
            )
        if self.slc.channels != self.mask_channels:
            object.__setattr__(self, "slc", replace(self.slc, channels=self.mask_channels))

    @property
    def stage_strides(self) -> Tuple[int, ...]:
        out, total = [], 1
        for s in self.backbone_strides:
            total *= s
            out.append(total)
        return tuple(out)

    @property
    def feature_strides(self) -> Tuple[int, ...]:
        return tuple(self.stage_strides[i - 1] for i in self.pyramid_stages)

    @property
    def extra_rpn_levels(self) -> int:
        """Coarser RPN-only levels obtained by stride-2 subsampling of the top level."""
        return len(self.anchors.strides) - len(self.feature_strides)

    @property
    def positive_fraction(self) -> float:
        pos, neg = self.positive_ratio
        return pos / (pos + neg)
