"""Differentiable operations used by the SLC module and the detector."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .tensor import ShapeError, Tensor, make_result

BCE_EPS = 1e-7


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        for axis, (x, y) in enumerate(zip(a.shape, b.shape)):
            if x != y:
                raise ShapeError(f"{op}: axis {axis} differs ({x} vs {y}); shapes {a.shape} and {b.shape}")
        raise ShapeError(f"{op}: rank differs; shapes {a.shape} and {b.shape}")


# ------------------------------------------------------------------ elementwise
def add(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise sum of two identically shaped tensors."""
    _same_shape(a, b, "elementwise_add")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g), "add")


elementwise_add = add


def add_all(tensors: Sequence[Tensor]) -> Tensor:
    """Left-to-right sum ``((t0 + t1) + t2) + ...``."""
    if not tensors:
        raise ValueError("add_all needs at least one tensor")
    out = tensors[0]
    for t in tensors[1:]:
        out = add(out, t)
    return out


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return make_result(x.data * factor, (x,), lambda g: (g * factor,), "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0  # subgradient 0 at 0
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)
    return make_result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


# ------------------------------------------------------------------- reductions
def tensor_sum(x: Tensor) -> Tensor:
    shape = x.shape
    return make_result(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),), "sum")


def tensor_mean(x: Tensor) -> Tensor:
    shape, n = x.shape, max(x.size, 1)
    return make_result(np.array(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),), "mean")


# ------------------------------------------------------------------ reshaping
def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def take_rows(x: Tensor, index) -> Tensor:
    """Select entries along axis 0 (repeats allowed)."""
    index = np.asarray(index, dtype=np.int64)
    src = x.shape

    def grad_fn(g):
        out = np.zeros(src)
        np.add.at(out, index, g)
        return (out,)

    return make_result(x.data[index], (x,), grad_fn, "take_rows")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, cuts, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, grad_fn, "concat")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def grad_fn(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return make_result(out, (x,), grad_fn, "upsample_nearest")


def subsample(x: Tensor, factor: int = 2) -> Tensor:
    """Keep every ``factor``-th row and column (stride-``factor`` 1x1 max pool)."""
    src = x.shape

    def grad_fn(g):
        out = np.zeros(src)
        out[:, :, ::factor, ::factor] = g
        return (out,)

    return make_result(np.ascontiguousarray(x.data[:, :, ::factor, ::factor]), (x,), grad_fn, "subsample")


# ------------------------------------------------------------------- linear
def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` for x of shape (N, D) and weight (D, O)."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"linear: expected 2-D operands, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"linear: feature axis 1 has {x.shape[1]}, weight expects {weight.shape[0]}")
    out = x.data @ weight.data
    parents = [x, weight]
    if bias is not None:
        out = out + bias.data
        parents.append(bias)
    xd, wd = x.data, weight.data

    def grad_fn(g):
        grads = [g @ wd.T, xd.T @ g]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return make_result(out, parents, grad_fn, "linear")


# ---------------------------------------------------------------- convolution
@dataclass
class ConvBlockSpec:
    """One convolution: weights (out, in, k, k), bias (out,) and its geometry."""

    in_channels: int
    out_channels: int
    kernel_size: int = 3
    dilation: int = 1
    padding: Optional[int] = None
    stride: int = 1
    weight: Tensor = field(default=None, repr=False)
    bias: Tensor = field(default=None, repr=False)

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.padding is None:
            self.padding = same_padding(self.kernel_size, self.dilation)
        if self.padding < 0:
            raise ValueError("padding must be non-negative")
        wshape = (self.out_channels, self.in_channels, self.kernel_size, self.kernel_size)
        if self.weight is None:
            self.weight = Tensor(np.zeros(wshape), requires_grad=True)
        if self.bias is None:
            self.bias = Tensor(np.zeros(self.out_channels), requires_grad=True)
        if self.weight.shape != wshape:
            raise ShapeError(f"weight shape {self.weight.shape} does not match {wshape}")
        if self.bias.shape != (self.out_channels,):
            raise ShapeError(f"bias shape {self.bias.shape} does not match ({self.out_channels},)")

    @property
    def effective_kernel(self) -> int:
        return self.dilation * (self.kernel_size - 1) + 1

    def parameters(self) -> list:
        return [self.weight, self.bias]

    def init_he(self, rng: np.random.Generator) -> "ConvBlockSpec":
        fan_in = self.in_channels * self.kernel_size * self.kernel_size
        self.weight.data[...] = rng.normal(0.0, np.sqrt(2.0 / fan_in), self.weight.shape)
        self.bias.data[...] = 0.0
        return self


def same_padding(kernel_size: int, dilation: int) -> int:
    return dilation * (kernel_size - 1) // 2


def conv_output_extent(extent: int, kernel_size: int, dilation: int, padding: int, stride: int = 1) -> int:
    return (extent + 2 * padding - (dilation * (kernel_size - 1) + 1)) // stride + 1


def conv2d(x: Tensor, spec: ConvBlockSpec) -> Tensor:
    """2-D (dilated, strided) cross-correlation over an (N, C, H, W) input."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d: expected (N, C, H, W) input, got shape {x.shape}")
    n, c, h, w = x.shape
    if c != spec.in_channels:
        raise ShapeError(f"conv2d: channel axis (1) has {c}, expected {spec.in_channels}")
    k, r, p, s = spec.kernel_size, spec.dilation, spec.padding, spec.stride
    eff = spec.effective_kernel
    for axis, extent in ((2, h), (3, w)):
        if extent + 2 * p < eff:
            raise ShapeError(
                f"conv2d: spatial axis {axis} has extent {extent} (+{2 * p} padding), "
                f"smaller than effective kernel {eff}"
            )
    ho = conv_output_extent(h, k, r, p, s)
    wo = conv_output_extent(w, k, r, p, s)
    wdata = spec.weight.data
    o = spec.out_channels

    if k == 1 and p == 0 and s == 1:
        out = np.tensordot(wdata[:, :, 0, 0], x.data, axes=([1], [1]))  # (O, N, H, W)
        out = out.transpose(1, 0, 2, 3) + spec.bias.data[None, :, None, None]
        xd = x.data

        def grad_1x1(g):
            gx = None
            if x.requires_grad:
                gx = np.tensordot(g, wdata[:, :, 0, 0], axes=([1], [0])).transpose(0, 3, 1, 2)
            gw = np.tensordot(g, xd, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
            return gx, gw, g.sum(axis=(0, 2, 3))

        return make_result(np.ascontiguousarray(out), (x, spec.weight, spec.bias), grad_1x1, "conv2d")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols = np.empty((c, k, k, n, ho, wo))
    for i in range(k):
        for j in range(k):
            patch = xp[:, :, i * r : i * r + s * (ho - 1) + 1 : s, j * r : j * r + s * (wo - 1) + 1 : s]
            cols[:, i, j] = patch.transpose(1, 0, 2, 3)
    cols2 = cols.reshape(c * k * k, n * ho * wo)
    w2 = wdata.reshape(o, c * k * k)
    out = (w2 @ cols2).reshape(o, n, ho, wo).transpose(1, 0, 2, 3) + spec.bias.data[None, :, None, None]
    padded_shape = xp.shape

    def grad_fn(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(o, n * ho * wo)
        gw = (g2 @ cols2.T).reshape(wdata.shape)
        gb = g2.sum(axis=1)
        if not x.requires_grad:
            return None, gw, gb
        gcols = (w2.T @ g2).reshape(c, k, k, n, ho, wo)
        gxp = np.zeros(padded_shape)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i * r : i * r + s * (ho - 1) + 1 : s, j * r : j * r + s * (wo - 1) + 1 : s] += gcols[
                    :, i, j
                ].transpose(1, 0, 2, 3)
        gx = gxp[:, :, p : p + h, p : p + w] if p else gxp
        return gx, gw, gb

    return make_result(np.ascontiguousarray(out), (x, spec.weight, spec.bias), grad_fn, "conv2d")


def conv_transpose2x2(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Stride-2, 2x2 transposed convolution; weight is (in, out, 2, 2)."""
    n, c, h, w = x.shape
    if weight.shape[0] != c or weight.shape[2:] != (2, 2):
        raise ShapeError(f"conv_transpose2x2: weight {weight.shape} incompatible with input channels {c}")
    o = weight.shape[1]
    xd, wd = x.data, weight.data
    # out[n, o, y, a, x, b] = sum_c x[n, c, y, x] * w[c, o, a, b]
    t = np.tensordot(xd, wd, axes=([1], [0]))  # (N, H, W, O, 2, 2)
    out = t.transpose(0, 3, 1, 4, 2, 5).reshape(n, o, 2 * h, 2 * w) + bias.data[None, :, None, None]

    def grad_fn(g):
        g6 = g.reshape(n, o, h, 2, w, 2)
        gx = np.tensordot(g6, wd, axes=([1, 3, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        gw = np.tensordot(xd, g6, axes=([0, 2, 3], [0, 2, 4]))  # (C, O, 2, 2)
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_result(np.ascontiguousarray(out), (x, weight, bias), grad_fn, "conv_transpose2x2")


# ------------------------------------------------------------------- losses
def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy of probabilities, clamped at ``BCE_EPS``."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != t.shape:
        raise ShapeError(f"bce_loss: prediction shape {pred.shape} vs target shape {t.shape}")
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    n = max(p.size, 1)
    value = -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)).mean()
    inside = (pred.data >= BCE_EPS) & (pred.data <= 1.0 - BCE_EPS)

    def grad_fn(g):
        return (float(g) * inside * (-(t / p) + (1.0 - t) / (1.0 - p)) / n,)

    return make_result(np.array(value), (pred,), grad_fn, "bce_loss")


def bce_with_logits(logits: Tensor, target, weight=None) -> Tensor:
    """Mean binary cross-entropy computed from logits (stable form)."""
    t = np.asarray(target, dtype=np.float64)
    if logits.shape != t.shape:
        raise ShapeError(f"bce_with_logits: logits shape {logits.shape} vs target shape {t.shape}")
    z = logits.data
    wt = np.ones_like(z) if weight is None else np.asarray(weight, dtype=np.float64)
    n = max(z.size, 1)
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    value = (wt * per).sum() / n

    def grad_fn(g):
        return (float(g) * wt * (_stable_sigmoid(z) - t) / n,)

    return make_result(np.array(value), (logits,), grad_fn, "bce_with_logits")


def smooth_l1_loss(pred: Tensor, target, normalizer: Optional[float] = None) -> Tensor:
    """Mean Huber-style loss: 0.5 d^2 if |d| < 1 else |d| - 0.5."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != t.shape:
        raise ShapeError(f"smooth_l1_loss: prediction shape {pred.shape} vs target shape {t.shape}")
    d = pred.data - t
    ad = np.abs(d)
    small = ad < 1.0
    n = float(normalizer) if normalizer is not None else max(d.size, 1)
    value = np.where(small, 0.5 * d * d, ad - 0.5).sum() / n

    def grad_fn(g):
        return (float(g) * np.where(small, d, np.sign(d)) / n,)

    return make_result(np.array(value), (pred,), grad_fn, "smooth_l1_loss")
