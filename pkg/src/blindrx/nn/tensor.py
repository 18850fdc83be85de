"""Reverse-mode differentiation on numpy arrays.

A Tensor wraps a float64 array plus a backward closure; calling
``backward()`` on a scalar walks the graph in reverse topological order.
Only the operations the receiver network needs exist here: elementwise
arithmetic with broadcasting, a few activations, reductions, slicing,
matmul, softmax, and three fused network ops (conv1d, lstm_scan,
complex_fir) that delegate their inner loops to the kernel backends.

Complex signals are carried as (B, 2, L) real tensors, channel 0 = I,
channel 1 = Q.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .. import _kernels
from ..exceptions import DimensionError
from ..sigcore import cfo_rotation, mix_down

Arrayish = Union["Tensor", np.ndarray, float, int]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "_prev", "_backward")

    def __init__(self, data, prev: Sequence["Tensor"] = (), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self._prev = tuple(prev)
        self._backward = backward

    # -- plumbing ----------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise DimensionError("backward() needs a scalar")
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    # -- arithmetic --------------------------------------------------------

    @staticmethod
    def _lift(x: Arrayish) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))

    def __add__(self, other: Arrayish) -> "Tensor":
        other = Tensor._lift(other)
        out = Tensor(self.data + other.data, (self, other))

        def back(g):
            self._accum(_unbroadcast(g, self.shape))
            other._accum(_unbroadcast(g, other.shape))
        out._backward = back
        return out

    def __mul__(self, other: Arrayish) -> "Tensor":
        other = Tensor._lift(other)
        out = Tensor(self.data * other.data, (self, other))

        def back(g):
            self._accum(_unbroadcast(g * other.data, self.shape))
            other._accum(_unbroadcast(g * self.data, other.shape))
        out._backward = back
        return out

    def __neg__(self) -> "Tensor":
        out = Tensor(-self.data, (self,))
        out._backward = lambda g: self._accum(-g)
        return out

    def __sub__(self, other: Arrayish) -> "Tensor":
        return self + (-Tensor._lift(other))

    def __rsub__(self, other: Arrayish) -> "Tensor":
        return Tensor._lift(other) + (-self)

    def __truediv__(self, other: Arrayish) -> "Tensor":
        other = Tensor._lift(other)
        out = Tensor(self.data / other.data, (self, other))

        def back(g):
            self._accum(_unbroadcast(g / other.data, self.shape))
            other._accum(_unbroadcast(-g * self.data / other.data**2, other.shape))
        out._backward = back
        return out

    def __rtruediv__(self, other: Arrayish) -> "Tensor":
        return Tensor._lift(other) / self

    __radd__ = __add__
    __rmul__ = __mul__

    def __pow__(self, e: float) -> "Tensor":
        out = Tensor(self.data**e, (self,))
        out._backward = lambda g: self._accum(g * e * self.data ** (e - 1))
        return out

    # -- elementwise functions ----------------------------------------------

    def exp(self) -> "Tensor":
        out = Tensor(np.exp(self.data), (self,))
        out._backward = lambda g: self._accum(g * out.data)
        return out

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.data), (self,))
        out._backward = lambda g: self._accum(g / self.data)
        return out

    def sqrt(self) -> "Tensor":
        out = Tensor(np.sqrt(self.data), (self,))
        out._backward = lambda g: self._accum(g * 0.5 / np.maximum(out.data, 1e-300))
        return out

    def tanh(self) -> "Tensor":
        out = Tensor(np.tanh(self.data), (self,))
        out._backward = lambda g: self._accum(g * (1.0 - out.data**2))
        return out

    def sigmoid(self) -> "Tensor":
        out = Tensor(1.0 / (1.0 + np.exp(-self.data)), (self,))
        out._backward = lambda g: self._accum(g * out.data * (1.0 - out.data))
        return out

    def relu(self) -> "Tensor":
        out = Tensor(np.maximum(self.data, 0.0), (self,))
        out._backward = lambda g: self._accum(g * (self.data > 0.0))
        return out

    def sin(self) -> "Tensor":
        out = Tensor(np.sin(self.data), (self,))
        out._backward = lambda g: self._accum(g * np.cos(self.data))
        return out

    def cos(self) -> "Tensor":
        out = Tensor(np.cos(self.data), (self,))
        out._backward = lambda g: self._accum(-g * np.sin(self.data))
        return out

    def clip(self, lo: float, hi: float) -> "Tensor":
        out = Tensor(np.clip(self.data, lo, hi), (self,))
        inside = (self.data > lo) & (self.data < hi)
        out._backward = lambda g: self._accum(g * inside)
        return out

    # -- shape / reductions --------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        out = Tensor(self.data.reshape(*shape), (self,))
        out._backward = lambda g: self._accum(g.reshape(self.shape))
        return out

    def __getitem__(self, idx) -> "Tensor":
        out = Tensor(self.data[idx], (self,))

        def back(g):
            full = np.zeros_like(self.data)
            full[idx] += g
            self._accum(full)
        out._backward = back
        return out

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.shape).copy())
        out._backward = back
        return out

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        n = self.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def matmul(self, other: "Tensor") -> "Tensor":
        out = Tensor(self.data @ other.data, (self, other))

        def back(g):
            self._accum(g @ other.data.T)
            other._accum(self.data.T @ g)
        out._backward = back
        return out

    def __matmul__(self, other):
        return self.matmul(other)

    def softmax(self) -> "Tensor":
        """Row-wise softmax over the last axis."""
        shifted = self.data - self.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        s = e / e.sum(axis=-1, keepdims=True)
        out = Tensor(s, (self,))

        def back(g):
            self._accum(s * (g - (g * s).sum(axis=-1, keepdims=True)))
        out._backward = back
        return out


# ---------------------------------------------------------------------------
# graph utilities
# ---------------------------------------------------------------------------

def stop_gradient(x: Tensor) -> Tensor:
    """Forward identity (shares the data buffer), no backward edge."""
    return Tensor(x.data)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]

    def back(g):
        pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        for t, p in zip(tensors, pieces):
            t._accum(p)
    out._backward = back
    return out


def minimum2(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route the gradient to the first argument."""
    take_a = a.data <= b.data
    out = Tensor(np.where(take_a, a.data, b.data), (a, b))

    def back(g):
        a._accum(g * take_a)
        b._accum(g * ~take_a)
    out._backward = back
    return out


def magnitude(re: Tensor, im: Tensor) -> Tensor:
    """sqrt(re^2 + im^2) with subgradient 0 at the origin."""
    r = np.sqrt(re.data**2 + im.data**2)
    out = Tensor(r, (re, im))
    safe = np.where(r > 0.0, r, 1.0)

    def back(g):
        scale = g * (r > 0.0) / safe
        re._accum(scale * re.data)
        im._accum(scale * im.data)
    out._backward = back
    return out


# ---------------------------------------------------------------------------
# fused network operations
# ---------------------------------------------------------------------------

def conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded cross-correlation: x (B,Ci,L), w (Co,Ci,K) odd K, b (Co,)."""
    if x.data.ndim != 3 or w.data.ndim != 3 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv1d shapes {x.shape} / {w.shape}")
    if w.shape[2] % 2 == 0:
        raise DimensionError("kernel length must be odd")
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    out = Tensor(_kernels.conv1d_fwd(xd, wd, b.data), (x, w, b))

    def back(g):
        gx, gw, gb = _kernels.conv1d_bwd(xd, wd, np.ascontiguousarray(g))
        x._accum(gx)
        w._accum(gw)
        b._accum(gb)
    out._backward = back
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, L) -> (B, C) per-channel mean."""
    return x.mean(axis=2)


def complex_fir(x: Tensor, taps: Tensor, center: int) -> Tensor:
    """Per-sample complex FIR: x (B,2,L), taps (B,2,K); returns (B,2,L).

    out[n] = sum_j t[j] * x[n - j + center] in complex arithmetic; tap index
    `center` multiplies x[n], so a delta there is the identity filter.
    """
    B, two, L = x.shape
    K = taps.shape[2]
    if two != 2 or taps.shape[:2] != (B, 2):
        raise DimensionError(f"complex_fir shapes {x.shape} / {taps.shape}")
    xc = np.ascontiguousarray(x.data[:, 0] + 1j * x.data[:, 1])
    tc = np.ascontiguousarray(taps.data[:, 0] + 1j * taps.data[:, 1])
    yc = _kernels.cfir_fwd(xc, tc, center)
    out = Tensor(np.stack([yc.real, yc.imag], axis=1), (x, taps))

    def back(g):
        gc = np.ascontiguousarray(g[:, 0] + 1j * g[:, 1])
        gx = _kernels.cfir_bwd_x(tc, gc, center)
        gt = _kernels.cfir_bwd_t(xc, gc, center, K)
        x._accum(np.stack([gx.real, gx.imag], axis=1))
        taps._accum(np.stack([gt.real, gt.imag], axis=1))
    out._backward = back
    return out


def cfo_mix(x: Tensor, f0: Tensor) -> Tensor:
    """Multiply x (B,2,L) by exp(-j*2*pi*f0*k) per sample; f0 (B, 1)."""
    B, two, L = x.shape
    if two != 2 or f0.shape != (B, 1):
        raise DimensionError(f"cfo_mix shapes {x.shape} / {f0.shape}")
    k = np.arange(L, dtype=np.float64)
    c, s = cfo_rotation(f0.data, L)              # (B, L)
    xr, xi = x.data[:, 0], x.data[:, 1]
    yr, yi = mix_down(xr, xi, c, s)
    out = Tensor(np.stack([yr, yi], axis=1), (x, f0))

    def back(g):
        gr, gi = g[:, 0], g[:, 1]
        gxr = gr * c - gi * s
        gxi = gr * s + gi * c
        x._accum(np.stack([gxr, gxi], axis=1))
        # dy/dtheta: dyr = yi, dyi = -yr
        dtheta = gr * yi - gi * yr
        f0._accum((dtheta * (2.0 * np.pi * k)).sum(axis=1, keepdims=True))
    out._backward = back
    return out


def lstm_scan(x: Tensor, w: Tensor, b: Tensor, h0: Tensor, c0: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    """Batched LSTM over x (B,L,Din); returns (outputs (B,L,Dh), hT, cT).

    Gate layout in w (Din+Dh, 4Dh) and b (4Dh,) is [input, forget, cell,
    output]. Gradients flow into x, w, b, and the initial state, so two
    scans can be chained through their states.
    """
    B, L, Din = x.shape
    Dh = h0.shape[1]
    if w.shape != (Din + Dh, 4 * Dh) or b.shape != (4 * Dh,):
        raise DimensionError(f"lstm shapes {w.shape} / {b.shape}")
    if h0.shape != (B, Dh) or c0.shape != (B, Dh):
        raise DimensionError("state shape mismatch")
    wd, bd = w.data, b.data
    h, c = h0.data, c0.data
    cache = []
    hs = np.empty((B, L, Dh))
    for t in range(L):
        xt = x.data[:, t]
        xh = np.concatenate([xt, h], axis=1)
        z = xh @ wd + bd
        i = 1.0 / (1.0 + np.exp(-z[:, :Dh]))
        f = 1.0 / (1.0 + np.exp(-z[:, Dh:2 * Dh]))
        g = np.tanh(z[:, 2 * Dh:3 * Dh])
        o = 1.0 / (1.0 + np.exp(-z[:, 3 * Dh:]))
        c_prev = c
        c = f * c_prev + i * g
        tc_ = np.tanh(c)
        h = o * tc_
        hs[:, t] = h
        cache.append((xh, i, f, g, o, c_prev, tc_))

    # single graph node carrying [outputs | hT | cT] so one backward pass
    # sees all three gradients at once
    packed = np.concatenate([hs, h[:, None], c[:, None]], axis=1)
    out = Tensor(packed, (x, w, b, h0, c0))

    def back(gp):
        g_hs, g_hT, g_cT = gp[:, :L], gp[:, L], gp[:, L + 1]
        gw = np.zeros_like(wd)
        gb = np.zeros_like(bd)
        gx = np.zeros((B, L, Din))
        dh = g_hT.copy()
        dc = g_cT.copy()
        for t in range(L - 1, -1, -1):
            xh, i, f, g_, o, c_prev, tc_ = cache[t]
            dh = dh + g_hs[:, t]
            do = dh * tc_
            dc = dc + dh * o * (1.0 - tc_**2)
            di = dc * g_
            df = dc * c_prev
            dg = dc * i
            dz = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g_**2),
                do * o * (1.0 - o),
            ], axis=1)
            gw += xh.T @ dz
            gb += dz.sum(axis=0)
            dxh = dz @ wd.T
            gx[:, t] = dxh[:, :Din]
            dh = dxh[:, Din:]
            dc = dc * f
        x._accum(gx)
        w._accum(gw)
        b._accum(gb)
        h0._accum(dh)
        c0._accum(dc)
    out._backward = back
    ys = out[:, :L]
    hT = out[:, L]
    cT = out[:, L + 1]
    return ys, hT, cT
