"""SGD with momentum and L2 weight decay."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Tensor

DEFAULT_LR = 5e-4
DEFAULT_MOMENTUM = 0.9
DEFAULT_WEIGHT_DECAY = 1e-4


class SGD:
    """``v <- momentum * v + grad + weight_decay * p``; ``p <- p - lr * v``.

    Velocity buffers live on the optimizer and persist across ``step`` calls.
    """

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = DEFAULT_LR,
        momentum: float = DEFAULT_MOMENTUM,
        weight_decay: float = DEFAULT_WEIGHT_DECAY,
    ):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"parameter {p.name or i} has no gradient; run backward() first")
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v += p.grad + self.weight_decay * p.data
            p.data -= self.lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def sgd_step(params, lr=DEFAULT_LR, momentum=DEFAULT_MOMENTUM, weight_decay=DEFAULT_WEIGHT_DECAY, state=None) -> SGD:
    """One update; pass the returned optimizer back as ``state`` to keep velocity."""
    opt = state if state is not None else SGD(params, lr, momentum, weight_decay)
    opt.step()
    return opt


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    params = [p for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params)))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for p in params:
            p.grad = p.grad * factor
    return total
