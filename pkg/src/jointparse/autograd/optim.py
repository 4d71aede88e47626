"""Adam with the inverse-square-root warmup schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .tensor import Tensor


def noam_lr(step: int, d_model: int, warmup: int, base: float = 1.0) -> float:
    """``base * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)``; peaks at ``step == warmup``."""
    if step < 1:
        raise ValueError(f"schedule is defined for step >= 1, got {step}")
    if warmup < 1:
        raise ValueError(f"warmup must be >= 1, got {warmup}")
    return base * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


@dataclass
class OptimizerState:
    lr: float
    warmup: int
    d_model: int
    step: int = 0
    m: Dict[int, np.ndarray] = field(default_factory=dict)
    v: Dict[int, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam over tensors with ``requires_grad``; frozen tensors are skipped.

    With ``schedule=True`` the step size is ``noam_lr(step, d_model, warmup, lr)``,
    otherwise the constant ``lr``.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1.0, warmup: int = 4000,
                 d_model: int = 1, betas=(0.9, 0.98), eps: float = 1e-9, schedule: bool = True):
        self.params: List[Tensor] = [p for p in params if p.requires_grad]
        self.state = OptimizerState(lr=lr, warmup=warmup, d_model=d_model)
        self.betas = betas
        self.eps = eps
        self.schedule = schedule
        for i, p in enumerate(self.params):
            self.state.m[i] = np.zeros_like(p.data)
            self.state.v[i] = np.zeros_like(p.data)

    def current_lr(self) -> float:
        s = self.state
        if self.schedule:
            return noam_lr(max(s.step, 1), s.d_model, s.warmup, s.lr)
        return s.lr

    def zero_grad(self):
        for p in self.params:
            p.grad[...] = 0.0

    def step(self):
        s = self.state
        s.step += 1
        lr = self.current_lr()
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** s.step
        c2 = 1.0 - b2 ** s.step
        for i, p in enumerate(self.params):
            g = p.grad
            m, v = s.m[i], s.v[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
