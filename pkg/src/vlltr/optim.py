"""AdamW with decoupled weight decay, plus the cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, ValidationError
from .tensor import Tensor


@dataclass
class LrSchedule:
    base_lr: float
    min_lr: float
    total_steps: int


def cosine_lr(sched: LrSchedule, step: int) -> float:
    """Half-cosine decay from base_lr at step 0 to min_lr at total_steps."""
    if not 0 <= step <= sched.total_steps:
        raise ValidationError(
            f"cosine_lr: step {step} outside [0, {sched.total_steps}]"
        )
    span = sched.base_lr - sched.min_lr
    return sched.min_lr + 0.5 * span * (
        1.0 + math.cos(math.pi * step / sched.total_steps)
    )


class AdamW:
    """Decoupled-weight-decay Adam over a name -> Tensor parameter dict."""

    def __init__(self, params: dict[str, Tensor], base_lr: float,
                 weight_decay: float = 0.05, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.base_lr = base_lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None):
        lr = self.base_lr if lr is None else lr
        if lr < 0:
            raise ValidationError(f"AdamW: negative learning rate {lr}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeMismatch(
                    f"AdamW: gradient shape {g.shape} != parameter "
                    f"shape {p.data.shape} for '{name}'"
                )
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
