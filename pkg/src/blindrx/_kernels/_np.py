"""Pure-numpy kernel backend.

Convolutions are expressed as im2col + matmul so BLAS does the heavy work.
Shapes:
    conv1d   x (B, Ci, L) f64, w (Co, Ci, K) f64 with K odd, b (Co,) f64
    cfir     x (B, L) c128, t (B, K) c128, one tap vector per row
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(xp: np.ndarray, k: int) -> np.ndarray:
    return sliding_window_view(xp, k, axis=-1)


def conv1d_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    B, Ci, L = x.shape
    Co, _, K = w.shape
    pad = K // 2
    xp = np.zeros((B, Ci, L + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + L] = x
    win = _windows(xp, K)                                   # (B, Ci, L, K)
    cols = win.transpose(0, 2, 1, 3).reshape(B, L, Ci * K)
    y = cols @ w.reshape(Co, Ci * K).T                      # (B, L, Co)
    return np.ascontiguousarray(y.transpose(0, 2, 1)) + b[None, :, None]


def conv1d_bwd(x: np.ndarray, w: np.ndarray, gy: np.ndarray):
    B, Ci, L = x.shape
    Co, _, K = w.shape
    pad = K // 2
    gb = gy.sum(axis=(0, 2))

    xp = np.zeros((B, Ci, L + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + L] = x
    cols = _windows(xp, K).transpose(0, 2, 1, 3).reshape(B * L, Ci * K)
    gy_flat = np.ascontiguousarray(gy.transpose(0, 2, 1)).reshape(B * L, Co)
    gw = (gy_flat.T @ cols).reshape(Co, Ci, K)

    # gx is a convolution of gy with the kernel flipped in k and o<->c swapped
    wf = np.ascontiguousarray(w[:, :, ::-1].transpose(1, 0, 2))
    gp = np.zeros((B, Co, L + 2 * pad), dtype=np.float64)
    gp[:, :, pad:pad + L] = gy
    gcols = _windows(gp, K).transpose(0, 2, 1, 3).reshape(B, L, Co * K)
    gx = gcols @ wf.reshape(Ci, Co * K).T
    return np.ascontiguousarray(gx.transpose(0, 2, 1)), gw, gb


def cfir_fwd(x: np.ndarray, t: np.ndarray, center: int) -> np.ndarray:
    """y[b, n] = sum_j t[b, j] * x[b, n - j + center], zero outside [0, L)."""
    B, L = x.shape
    K = t.shape[1]
    xp = np.zeros((B, L + K - 1), dtype=np.complex128)
    xp[:, K - 1 - center:K - 1 - center + L] = x
    win = _windows(xp, K)                                   # (B, L, K)
    return np.einsum("blk,bk->bl", win, t[:, ::-1])


def cfir_bwd_x(t: np.ndarray, gy: np.ndarray, center: int) -> np.ndarray:
    """gx[b, m] = sum_j conj(t[b, j]) * gy[b, m + j - center]."""
    B, L = gy.shape
    K = t.shape[1]
    gp = np.zeros((B, L + K - 1), dtype=np.complex128)
    gp[:, center:center + L] = gy
    win = _windows(gp, K)
    return np.einsum("blk,bk->bl", win, np.conj(t))


def cfir_bwd_t(x: np.ndarray, gy: np.ndarray, center: int, n_taps: int) -> np.ndarray:
    """gt[b, j] = sum_n gy[b, n] * conj(x[b, n - j + center])."""
    B, L = x.shape
    K = n_taps
    xp = np.zeros((B, L + K - 1), dtype=np.complex128)
    xp[:, K - 1 - center:K - 1 - center + L] = x
    win = _windows(xp, K)
    v = np.einsum("bl,blk->bk", gy, np.conj(win))
    return v[:, ::-1].copy()
