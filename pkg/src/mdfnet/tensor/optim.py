from __future__ import annotations

from typing import Iterable, List, Optional

import numpy as np

from .core import Tensor


class SGD:
    """Plain SGD with optional heavy-ball momentum and gradient-norm clipping."""

    def __init__(self, params: Iterable[Tensor], lr: float, momentum: float = 0.0,
                 weight_decay: float = 0.0, clip_norm: Optional[float] = None):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.params: List[Tensor] = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self._velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if self.clip_norm is not None:
            norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
            if norm > self.clip_norm:
                grads = [g * (self.clip_norm / norm) for g in grads]
        for p, g, v in zip(self.params, grads, self._velocity):
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            if self.momentum:
                v *= self.momentum
                v += g
                g = v
            p.data -= self.lr * g


def sgd_step(params: Iterable[Tensor], lr: float) -> None:
    """One momentum-free update ``p -= lr * grad`` in place."""
    for p in params:
        if p.grad is not None:
            p.data -= lr * p.grad
