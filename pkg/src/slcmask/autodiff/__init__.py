"""Minimal float64 tensors with reverse-mode differentiation."""

from .ops import (
    BCE_EPS,
    ConvBlockSpec,
    add,
    add_all,
    bce_loss,
    bce_with_logits,
    concat,
    conv2d,
    conv_output_extent,
    conv_transpose2x2,
    elementwise_add,
    linear,
    relu,
    reshape,
    same_padding,
    scale,
    sigmoid,
    smooth_l1_loss,
    subsample,
    take_rows,
    tensor_mean,
    tensor_sum,
    transpose,
    upsample_nearest,
)
from .optim import SGD, clip_grad_norm, sgd_step
from .roi import crop_and_resize, roi_align
from .serialize import CorruptTensorFile, decode_tensor, encode_tensor, load_tensors, save_tensors
from .tensor import NumericalError, ShapeError, Tensor, backward

__all__ = [name for name in dir() if not name.startswith("_")]
