"""Tiny backbone + FPN, RPN head, box head and mask head with optional SLC."""

from __future__ import annotations

import zlib
from collections import OrderedDict
from dataclasses import replace
from typing import Dict, List, Optional

import numpy as np

from ..autodiff import (
    ConvBlockSpec,
    Tensor,
    concat,
    conv2d,
    conv_transpose2x2,
    linear,
    relu,
    reshape,
    roi_align,
    subsample,
    take_rows,
    transpose,
    upsample_nearest,
)
from ..autodiff.tensor import ShapeError
from ..slc import SlcConfig, SlcModule, slc_forward
from .config import PipelineConfig

# Small std for the final classification layers.
LOGIT_INIT_STD = 0.01
# Per-channel input normalisation of [0, 1] images.
PIXEL_MEAN = np.array([0.3, 0.3, 0.3])
PIXEL_STD = np.array([0.25, 0.25, 0.25])


class ParameterStore:
    """Ordered name -> Tensor registry with per-name seeded initialisation.

    Each parameter draws from its own RNG stream keyed by (seed, name), so the
    shared parts of two models that differ only by an optional block start
    from identical weights.
    """

    def __init__(self):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()

    def conv(self, name: str, cin: int, cout: int, k: int = 3, dilation: int = 1, stride: int = 1) -> ConvBlockSpec:
        spec = ConvBlockSpec(cin, cout, kernel_size=k, dilation=dilation, stride=stride)
        self.add(f"{name}.weight", spec.weight)
        self.add(f"{name}.bias", spec.bias)
        return spec

    def dense(self, name: str, din: int, dout: int):
        w = Tensor(np.zeros((din, dout)), requires_grad=True)
        b = Tensor(np.zeros(dout), requires_grad=True)
        self.add(f"{name}.weight", w)
        self.add(f"{name}.bias", b)
        return w, b

    def add(self, name: str, t: Tensor) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        t.name = name
        self.params[name] = t

    def init(self, seed: int, small: tuple = ()) -> None:
        for name, p in self.params.items():
            rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
            if name.endswith(".bias"):
                p.data[...] = 0.0
                continue
            if any(name.startswith(s) for s in small):
                p.data[...] = rng.normal(0.0, LOGIT_INIT_STD, p.shape)
                continue
            fan_in = p.shape[0] if p.ndim == 2 else int(np.prod(p.shape[1:]))
            if name.endswith("deconv.weight"):
                fan_in = p.shape[0]
            p.data[...] = rng.normal(0.0, np.sqrt(2.0 / fan_in), p.shape)


class MaskRCNN:
    """Simplified two-stage detector; every tensor op is differentiable."""

    def __init__(self, config: PipelineConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        store = ParameterStore()
        cfg = config
        a = cfg.anchors.per_location
        f = cfg.fpn_channels

        self.stages = []
        cin = 3
        for i, (cout, stride) in enumerate(zip(cfg.backbone_channels, cfg.backbone_strides), start=1):
            self.stages.append(store.conv(f"backbone.stage{i}", cin, cout, 3, stride=stride))
            cin = cout
        self.laterals = [
            store.conv(f"fpn.lateral{s}", cfg.backbone_channels[s - 1], f, 1) for s in cfg.pyramid_stages
        ]
        self.outputs = [store.conv(f"fpn.output{s}", f, f, 3) for s in cfg.pyramid_stages]

        self.rpn_conv = store.conv("rpn.conv", f, f, 3)
        self.rpn_cls = store.conv("rpn.cls", f, a, 1)
        self.rpn_box = store.conv("rpn.box", f, 4 * a, 1)

        slc: SlcConfig = cfg.slc
        self.box_slc: Optional[SlcModule] = None
        if slc.enabled and slc.attach_to_cls_reg:
            self.box_slc = SlcModule(replace(slc, channels=f), in_channels=f)
            for name, p in self.box_slc.named_parameters("box_head.slc"):
                store.add(name, p)
        flat = f * cfg.box_roi_size * cfg.box_roi_size
        self.fc1 = store.dense("box_head.fc1", flat, cfg.box_hidden)
        self.fc2 = store.dense("box_head.fc2", cfg.box_hidden, cfg.box_hidden)
        self.cls_out = store.dense("box_head.cls", cfg.box_hidden, 1)
        self.box_out = store.dense("box_head.box", cfg.box_hidden, 4)

        m = cfg.mask_channels
        self.mask_convs = []
        cin = f
        for i in range(1, cfg.mask_head_convs + 1):
            self.mask_convs.append(store.conv(f"mask_head.conv{i}", cin, m, 3))
            cin = m
        self.mask_slc: Optional[SlcModule] = None
        if slc.enabled:
            self.mask_slc = SlcModule(slc, in_channels=m)
            for name, p in self.mask_slc.named_parameters("mask_head.slc"):
                store.add(name, p)
        self.deconv_w = Tensor(np.zeros((m, m, 2, 2)), requires_grad=True)
        self.deconv_b = Tensor(np.zeros(m), requires_grad=True)
        store.add("mask_head.deconv.weight", self.deconv_w)
        store.add("mask_head.deconv.bias", self.deconv_b)
        self.mask_out = store.conv("mask_head.logits", m, 1, 1)

        store.init(seed, small=("rpn.cls", "box_head.cls", "mask_head.logits"))
        self.store = store

    # ---------------------------------------------------------------- params
    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        return self.store.params

    def parameters(self) -> List[Tensor]:
        return list(self.store.params.values())

    # -------------------------------------------------------------- backbone
    def check_extent(self, height: int, width: int) -> None:
        top = self.config.stage_strides[-1]
        for axis, extent in (("height", height), ("width", width)):
            if extent % top:
                pad = (-extent) % top
                raise ShapeError(
                    f"image {axis} {extent} is not divisible by the largest stride {top}; pad by {pad} px"
                )

    def backbone_forward(self, images: Tensor) -> List[Tensor]:
        """Feature pyramid, finest level first, at ``config.feature_strides``."""
        if images.ndim != 4 or images.shape[1] != 3:
            raise ShapeError(f"backbone expects (N, 3, H, W) images, got {images.shape}")
        self.check_extent(images.shape[2], images.shape[3])
        feats = []
        h = Tensor((images.data - PIXEL_MEAN[None, :, None, None]) / PIXEL_STD[None, :, None, None])
        for stage in self.stages:
            h = relu(conv2d(h, stage))
            feats.append(h)
        picked = [feats[s - 1] for s in self.config.pyramid_stages]
        lat = [conv2d(x, l) for x, l in zip(picked, self.laterals)]
        strides = self.config.feature_strides
        merged = [None] * len(lat)
        merged[-1] = lat[-1]
        for i in range(len(lat) - 2, -1, -1):
            merged[i] = lat[i] + upsample_nearest(merged[i + 1], strides[i + 1] // strides[i])
        return [conv2d(x, o) for x, o in zip(merged, self.outputs)]

    def rpn_levels(self, pyramid: List[Tensor]) -> List[Tensor]:
        levels = list(pyramid)
        for _ in range(self.config.extra_rpn_levels):
            levels.append(subsample(levels[-1], 2))
        return levels

    # ------------------------------------------------------------------- rpn
    def rpn_forward(self, pyramid: List[Tensor]):
        """Objectness logits (N, A_total) and deltas (N, A_total, 4).

        Anchor order within a level is row -> col -> ratio -> multiplier,
        matching :func:`generate_anchor_array`.
        """
        a = self.config.anchors.per_location
        logits, deltas, extents = [], [], []
        for p in self.rpn_levels(pyramid):
            n, _, h, w = p.shape
            t = relu(conv2d(p, self.rpn_conv))
            logits.append(reshape(transpose(conv2d(t, self.rpn_cls), (0, 2, 3, 1)), (n, h * w * a)))
            deltas.append(reshape(transpose(conv2d(t, self.rpn_box), (0, 2, 3, 1)), (n, h * w * a, 4)))
            extents.append((h, w))
        if len(logits) == 1:
            return logits[0], deltas[0], extents
        return concat(logits, axis=1), concat(deltas, axis=1), extents

    # ------------------------------------------------------------- roi pooling
    def assign_levels(self, boxes: np.ndarray) -> np.ndarray:
        scales = np.sqrt(np.maximum((boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1]), 1e-12))
        base = self.config.anchors.base_scales[0]
        lvl = np.floor(np.log2(scales / base) + 0.5)
        return np.clip(lvl, 0, len(self.config.feature_strides) - 1).astype(np.int64)

    def pool(self, pyramid: List[Tensor], boxes: np.ndarray, batch_index: np.ndarray, size: int) -> Tensor:
        levels = self.assign_levels(boxes)
        parts, order = [], []
        for lvl, stride in enumerate(self.config.feature_strides):
            idx = np.flatnonzero(levels == lvl)
            if idx.size == 0:
                continue
            parts.append(roi_align(pyramid[lvl], boxes[idx], batch_index[idx], size, 1.0 / stride))
            order.append(idx)
        if len(parts) == 1:
            return parts[0] if np.array_equal(order[0], np.arange(len(boxes))) else take_rows(parts[0], np.argsort(order[0]))
        stacked = concat(parts, axis=0)
        return take_rows(stacked, np.argsort(np.concatenate(order)))

    # ----------------------------------------------------------------- heads
    def box_head_forward(self, roi_features: Tensor):
        """Foreground logits (R,) and box deltas (R, 4)."""
        x = roi_features
        if self.box_slc is not None:
            x = relu(slc_forward(x, self.box_slc))
        x = reshape(x, (x.shape[0], -1))
        x = relu(linear(x, *self.fc1))
        x = relu(linear(x, *self.fc2))
        cls = linear(x, *self.cls_out)
        return reshape(cls, (cls.shape[0],)), linear(x, *self.box_out)

    def mask_features(self, roi_features: Tensor) -> Tensor:
        x = roi_features
        for conv in self.mask_convs:
            x = relu(conv2d(x, conv))
        return x

    def mask_head_forward(self, roi_features: Tensor) -> Tensor:
        """Per-pixel mask logits (R, 1, mask_size, mask_size)."""
        x = self.mask_features(roi_features)
        if self.mask_slc is not None:
            x = relu(slc_forward(x, self.mask_slc))
        x = relu(conv_transpose2x2(x, self.deconv_w, self.deconv_b))
        return conv2d(x, self.mask_out)

    # ----------------------------------------------------------- checkpoints
    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((k, v.data.copy()) for k, v in self.store.params.items())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        mine = self.store.params
        missing = [k for k in mine if k not in state]
        extra = [k for k in state if k not in mine]
        if missing or extra:
            raise KeyError(f"checkpoint mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for k, arr in state.items():
            if mine[k].shape != tuple(arr.shape):
                raise ShapeError(f"parameter {k}: checkpoint shape {tuple(arr.shape)} vs model {mine[k].shape}")
            mine[k].data[...] = arr
