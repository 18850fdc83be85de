"""ADAM with global-norm gradient clipping."""

from __future__ import annotations

import math
from typing import List, Tuple

import numpy as np

from ..exceptions import TrainingFault
from .tensor import Tensor


class Adam:
    """Clips the global gradient norm first, then applies the bias-corrected
    ADAM update. Missing gradients are treated as zero."""

    def __init__(self, params: List[Tuple[str, Tensor]], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 clip_norm: float = 1.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in self.params}
        self.v = {name: np.zeros_like(t.data) for name, t in self.params}

    def global_grad_norm(self) -> float:
        total = 0.0
        for _, t in self.params:
            if t.grad is not None:
                total += float(np.sum(t.grad**2))
        return math.sqrt(total)

    def step(self):
        norm = self.global_grad_norm()
        if not math.isfinite(norm):
            raise TrainingFault(f"non-finite gradient norm: {norm}")
        scale = 1.0 if norm <= self.clip_norm or norm == 0.0 else self.clip_norm / norm
        self.step_count += 1
        b1t = 1.0 - self.beta1**self.step_count
        b2t = 1.0 - self.beta2**self.step_count
        for name, t in self.params:
            g = (t.grad if t.grad is not None else 0.0) * scale
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            t.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def zero_grad(self):
        for _, t in self.params:
            t.zero_grad()
