"""Parameterized layers on top of the Tensor graph."""

from __future__ import annotations

import math
from typing import Dict, List, Tuple

import numpy as np

from .tensor import Tensor, conv1d, lstm_scan


class Module:
    """Named-parameter container; subclasses register Tensors as attributes."""

    def parameters(self) -> List[Tuple[str, Tensor]]:
        out: List[Tuple[str, Tensor]] = []
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                out.append((name, val))
            elif isinstance(val, Module):
                out.extend((f"{name}.{sub}", t) for sub, t in val.parameters())
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend((f"{name}.{i}.{sub}", t) for sub, t in item.parameters())
        return out

    def param_count(self) -> int:
        return sum(t.size for _, t in self.parameters())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        params = dict(self.parameters())
        missing = set(params) ^ set(state)
        if missing:
            raise KeyError(f"parameter name mismatch: {sorted(missing)}")
        for name, t in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()

    def zero_grad(self):
        for _, t in self.parameters():
            t.zero_grad()


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, shape)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator):
        self.w = Tensor(_he_uniform(rng, (c_out, c_in, k), c_in * k))
        self.b = Tensor(np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d(x, self.w, self.b)


class Dense(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.w = Tensor(_he_uniform(rng, (d_in, d_out), d_in))
        self.b = Tensor(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class ResidualBlock(Module):
    """conv -> ReLU -> conv with an identity skip; channel count preserved."""

    def __init__(self, channels: int, k: int, rng: np.random.Generator):
        self.conv1 = Conv1d(channels, channels, k, rng)
        self.conv2 = Conv1d(channels, channels, k, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.conv2(self.conv1(x).relu())


class LSTM(Module):
    """Single-layer LSTM; weights uniform(-k, k) with k = 1/sqrt(hidden),
    forget-gate bias 1 so early training does not flush the cell state."""

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        k = 1.0 / math.sqrt(d_hidden)
        self.w = Tensor(rng.uniform(-k, k, (d_in + d_hidden, 4 * d_hidden)))
        bias = np.zeros(4 * d_hidden)
        bias[d_hidden:2 * d_hidden] = 1.0
        self.b = Tensor(bias)
        self.d_in = d_in
        self.d_hidden = d_hidden

    def __call__(self, x: Tensor, h0: Tensor, c0: Tensor):
        return lstm_scan(x, self.w, self.b, h0, c0)
