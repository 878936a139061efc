"""Sequence Local Context module and receptive-field arithmetic.

Three blocks run in sequence, each a 1x1 conv followed by a 3x3 conv with
dilation 1, r1 and r2. Block i consumes block i-1's activated output, and
the pre-activation outputs of the selected blocks are summed element-wise.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np

from .autodiff import ConvBlockSpec, Tensor, add_all, conv2d, relu
from .autodiff.tensor import ShapeError


@dataclass(frozen=True)
class SlcConfig:
    r1: int = 2
    r2: int = 3
    channels: int = 16
    fused_layers: Tuple[int, ...] = (1, 2, 3)
    attach_to_cls_reg: bool = False
    enabled: bool = True

    def __post_init__(self):
        if self.r1 < 1 or self.r2 < 1:
            raise ValueError(f"dilation rates must be >= 1, got r1={self.r1}, r2={self.r2}")
        fused = tuple(sorted(set(int(i) for i in self.fused_layers)))
        if not fused or 1 not in fused or not set(fused) <= {1, 2, 3}:
            raise ValueError(f"fused_layers must be a subset of {{1,2,3}} containing 1, got {self.fused_layers}")
        object.__setattr__(self, "fused_layers", fused)
        if self.channels < 1:
            raise ValueError("channels must be positive")

    @property
    def rates(self) -> Tuple[int, int, int]:
        return (1, self.r1, self.r2)


class SlcLayer:
    """1x1 conv -> ReLU -> 3x3 dilated conv."""

    def __init__(self, channels: int, in_channels: int, dilation: int):
        self.reduce = ConvBlockSpec(in_channels, channels, kernel_size=1, padding=0)
        self.context = ConvBlockSpec(channels, channels, kernel_size=3, dilation=dilation)

    @property
    def dilation(self) -> int:
        return self.context.dilation

    def named_parameters(self, prefix: str):
        yield f"{prefix}.conv1x1.weight", self.reduce.weight
        yield f"{prefix}.conv1x1.bias", self.reduce.bias
        yield f"{prefix}.conv3x3.weight", self.context.weight
        yield f"{prefix}.conv3x3.bias", self.context.bias

    def __call__(self, x: Tensor) -> Tensor:
        """Pre-activation output of the dilated conv."""
        return conv2d(relu(conv2d(x, self.reduce)), self.context)


class SlcModule:
    def __init__(self, config: SlcConfig, in_channels: Optional[int] = None):
        self.config = config
        in_channels = config.channels if in_channels is None else in_channels
        self.layers = [
            SlcLayer(config.channels, in_channels if i == 0 else config.channels, rate)
            for i, rate in enumerate(config.rates)
        ]

    @property
    def in_channels(self) -> int:
        return self.layers[0].reduce.in_channels

    def named_parameters(self, prefix: str = "slc"):
        for i, layer in enumerate(self.layers, start=1):
            yield from layer.named_parameters(f"{prefix}.layer{i}")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def init_weights(self, seed: int, prefix: str = "slc") -> "SlcModule":
        for name, p in self.named_parameters(prefix):
            rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
            if p.ndim == 4:
                fan_in = p.shape[1] * p.shape[2] * p.shape[3]
                p.data[...] = rng.normal(0.0, np.sqrt(2.0 / fan_in), p.shape)
            else:
                p.data[...] = 0.0
        return self

    def layer_outputs(self, x: Tensor) -> list:
        """Pre-activation outputs of the three chained blocks."""
        outs = []
        h = x
        for layer in self.layers:
            pre = layer(h)
            outs.append(pre)
            h = relu(pre)
        return outs

    def __call__(self, x: Tensor) -> Tensor:
        return slc_forward(x, self)


def slc_forward(x: Tensor, module: SlcModule) -> Tensor:
    """Fused context feature; output has the input's spatial extent."""
    if x.ndim != 4:
        raise ShapeError(f"slc_forward: expected (N, C, H, W) input, got {x.shape}")
    if x.shape[1] != module.in_channels:
        raise ShapeError(f"slc_forward: channel axis (1) has {x.shape[1]}, module expects {module.in_channels}")
    fused = module.config.fused_layers
    # Later blocks only matter if they are fused.
    needed = max(fused)
    outs = []
    h = x
    for layer in module.layers[:needed]:
        pre = layer(h)
        outs.append(pre)
        h = relu(pre)
    return add_all([outs[i - 1] for i in fused])


# ----------------------------------------------------------- receptive fields
def receptive_field(r: int, k: int) -> int:
    """Extent seen by one k x k conv with dilation r: (r - 1)(k - 1) + k."""
    if r < 1 or k < 1:
        raise ValueError(f"dilation rate and kernel size must be positive, got r={r}, k={k}")
    return (r - 1) * (k - 1) + k


def compose_receptive_fields(r1: int, r2: int) -> int:
    """Receptive field of two stacked layers with fields ``r1`` and ``r2``."""
    if r1 < 1 or r2 < 1:
        raise ValueError(f"receptive fields must be >= 1, got {r1}, {r2}")
    return r1 + r2 - 1


def slc_layer_receptive_fields(r1: int, r2: int) -> Tuple[int, int, int]:
    """Cumulative receptive field after each block, folding 1x1 and 3x3 convs."""
    if r1 < 1 or r2 < 1:
        raise ValueError(f"dilation rates must be >= 1, got r1={r1}, r2={r2}")
    fields = []
    total = 1
    for rate in (1, r1, r2):
        total = compose_receptive_fields(total, receptive_field(1, 1))
        total = compose_receptive_fields(total, receptive_field(rate, 3))
        fields.append(total)
    return tuple(fields)


def closed_form_receptive_fields(r1: int, r2: int) -> Tuple[int, int, int]:
    return (3, 5 + 2 * (r1 - 1), 3 + 2 * (r1 + r2))


def support_width(arr: np.ndarray, axis: int) -> int:
    """Width of the nonzero support of ``arr`` along ``axis``."""
    other = tuple(a for a in range(arr.ndim) if a != axis)
    nz = np.flatnonzero(np.any(arr != 0, axis=other))
    return 0 if nz.size == 0 else int(nz[-1] - nz[0] + 1)


def measure_receptive_field(module_or_config, field: Optional[int] = None) -> int:
    """Empirical receptive field of the fused output.

    Every weight is set to one and every bias to zero, an impulse is placed at
    the centre of a zero field, and the width of the nonzero response is
    returned. Zero "same" padding on a field wider than the response is
    equivalent to an unpadded conv on a larger field.
    """
    config = module_or_config.config if isinstance(module_or_config, SlcModule) else module_or_config
    probe = SlcModule(SlcConfig(config.r1, config.r2, 1, config.fused_layers, enabled=True), in_channels=1)
    for _, p in probe.named_parameters():
        p.data[...] = 1.0 if p.ndim == 4 else 0.0
    expected = max(slc_layer_receptive_fields(config.r1, config.r2)[i - 1] for i in config.fused_layers)
    if field is None:
        field = expected + 4
    if field % 2 == 0:
        field += 1
    if field < expected + 2:
        raise ValueError(f"field of {field} px cannot contain a response of up to {expected} px with margin")
    impulse = np.zeros((1, 1, field, field))
    impulse[0, 0, field // 2, field // 2] = 1.0
    out = slc_forward(Tensor(impulse), probe).data
    width = support_width(out[0, 0], axis=1)
    if support_width(out[0, 0], axis=0) != width:
        raise AssertionError("impulse response is not square")
    return width


def measured_layer_receptive_fields(r1: int, r2: int) -> Tuple[int, int, int]:
    """Measured receptive field of each block alone (fusing 1..i is dominated by i)."""
    return tuple(
        measure_receptive_field(SlcConfig(r1, r2, 1, tuple(range(1, i + 1)))) for i in (1, 2, 3)
    )


def count_parameters(named: Iterable) -> int:
    return int(sum(p.size for _, p in named))
