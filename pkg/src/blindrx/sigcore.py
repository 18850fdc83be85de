"""Core signal types, constellation alphabets and the timing/sampling primitives.

Complex baseband sequences are plain 1-D ``numpy`` arrays of ``complex128``.
Everything downstream (generator, signal path, losses) shares the conventions
defined here:

- a timing signal is a binary vector that toggles once per symbol period;
  the toggle index marks the symbol sampling instant,
- ``sample_at_transitions`` keeps the sample *before* each toggle (the index
  ``i`` with ``z4[i] != z4[i+1]``) and zeroes everything else,
- all linear constellations are normalized to unit mean symbol energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .exceptions import (
    DimensionError,
    EmptyInputError,
    UnknownClassError,
    UnsupportedSchemeError,
)

LINEAR = "linear"
CONTINUOUS_PHASE = "continuous-phase"


class ModulationScheme(Enum):
    OOK = "OOK"
    ASK4 = "ASK4"
    ASK8 = "ASK8"
    BPSK = "BPSK"
    QPSK = "QPSK"
    PSK8 = "PSK8"
    PSK16 = "PSK16"
    PSK32 = "PSK32"
    APSK16 = "APSK16"
    APSK32 = "APSK32"
    APSK64 = "APSK64"
    APSK128 = "APSK128"
    QAM16 = "QAM16"
    QAM32 = "QAM32"
    QAM64 = "QAM64"
    QAM128 = "QAM128"
    QAM256 = "QAM256"
    GMSK = "GMSK"
    CPFSK = "CPFSK"

    @property
    def kind(self) -> str:
        return CONTINUOUS_PHASE if self in (ModulationScheme.GMSK, ModulationScheme.CPFSK) else LINEAR

    @property
    def order(self) -> int:
        """Constellation size; 2 for the binary continuous-phase schemes."""
        if self.kind == CONTINUOUS_PHASE:
            return 2
        sizes = {
            ModulationScheme.OOK: 2, ModulationScheme.ASK4: 4, ModulationScheme.ASK8: 8,
            ModulationScheme.BPSK: 2, ModulationScheme.QPSK: 4, ModulationScheme.PSK8: 8,
            ModulationScheme.PSK16: 16, ModulationScheme.PSK32: 32,
            ModulationScheme.APSK16: 16, ModulationScheme.APSK32: 32,
            ModulationScheme.APSK64: 64, ModulationScheme.APSK128: 128,
            ModulationScheme.QAM16: 16, ModulationScheme.QAM32: 32, ModulationScheme.QAM64: 64,
            ModulationScheme.QAM128: 128, ModulationScheme.QAM256: 256,
        }
        return sizes[self]


def as_complex_sequence(x) -> np.ndarray:
    """Validate and return ``x`` as a 1-D complex128 array."""
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim != 1 or arr.size == 0:
        raise EmptyInputError("complex sequence must be 1-D and non-empty")
    if not np.all(np.isfinite(arr.view(np.float64))):
        raise ValueError("complex sequence contains NaN/Inf")
    return arr


def to_iq(x: np.ndarray) -> np.ndarray:
    """Complex sequence -> real (2, N) array: row 0 = I, row 1 = Q."""
    x = np.asarray(x, dtype=np.complex128)
    return np.vstack([x.real, x.imag])


def from_iq(iq: np.ndarray) -> np.ndarray:
    """Real (2, N) array back to a complex sequence (lossless)."""
    iq = np.asarray(iq, dtype=np.float64)
    if iq.ndim != 2 or iq.shape[0] != 2:
        raise DimensionError(f"expected shape (2, N), got {iq.shape}")
    return iq[0] + 1j * iq[1]


def batch_to_iq(x: np.ndarray) -> np.ndarray:
    """Complex (B, N) -> real (B, 2, N)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.complex128))
    return np.stack([x.real, x.imag], axis=1)


def batch_from_iq(iq: np.ndarray) -> np.ndarray:
    """Real (B, 2, N) -> complex (B, N)."""
    iq = np.asarray(iq, dtype=np.float64)
    if iq.ndim != 3 or iq.shape[1] != 2:
        raise DimensionError(f"expected shape (B, 2, N), got {iq.shape}")
    return iq[:, 0] + 1j * iq[:, 1]


def round_half_up(x):
    """Round with ties away from zero-half, e.g. 2.5 -> 3 (plain round-half-up for x >= 0)."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


# ---------------------------------------------------------------------------
# constellations
# ---------------------------------------------------------------------------

def _normalize(points: np.ndarray) -> np.ndarray:
    return points / math.sqrt(float(np.mean(np.abs(points) ** 2)))


def _ask(levels: int) -> np.ndarray:
    pts = np.arange(-levels + 1, levels, 2).astype(np.complex128)
    return _normalize(pts)


def _psk(order: int) -> np.ndarray:
    return np.exp(2j * np.pi * np.arange(order) / order)


def _square_qam(order: int) -> np.ndarray:
    side = int(round(math.sqrt(order)))
    lv = np.arange(-side + 1, side, 2, dtype=np.float64)
    re, im = np.meshgrid(lv, lv)
    return _normalize((re + 1j * im).ravel())


def _cross_qam(order: int) -> np.ndarray:
    # 32-QAM: 6x6 grid minus the 4 corners; 128-QAM: 12x12 minus 2x2 per corner.
    if order == 32:
        side, cut = 6, 1
    elif order == 128:
        side, cut = 12, 2
    else:
        raise ValueError(order)
    lv = np.arange(-side + 1, side, 2, dtype=np.float64)
    re, im = np.meshgrid(lv, lv)
    pts = (re + 1j * im).ravel()
    lim = lv[-1] - 2 * (cut - 1)
    keep = ~((np.abs(pts.real) >= lim) & (np.abs(pts.imag) >= lim))
    pts = pts[keep]
    assert pts.size == order
    return _normalize(pts)


def _apsk(ring_sizes: Sequence[int], ring_radii: Sequence[float],
          ring_phases: Sequence[float]) -> np.ndarray:
    pts = []
    for n, r, ph in zip(ring_sizes, ring_radii, ring_phases):
        pts.append(r * np.exp(1j * (2 * np.pi * np.arange(n) / n + ph)))
    return _normalize(np.concatenate(pts))


@lru_cache(maxsize=None)
def constellation(scheme: ModulationScheme) -> np.ndarray:
    """Deterministic unit-mean-energy constellation for a linear scheme.

    PSK points are in angular order, QAM points in row-major grid order.
    16/32-APSK use DVB-S2 ring ratios; 64/128-APSK use equal-population
    concentric rings.
    """
    if scheme.kind != LINEAR:
        raise UnsupportedSchemeError(f"{scheme.value} has no constellation")
    if scheme == ModulationScheme.OOK:
        pts = _normalize(np.array([0.0, 1.0], dtype=np.complex128))
    elif scheme == ModulationScheme.ASK4:
        pts = _ask(4)
    elif scheme == ModulationScheme.ASK8:
        pts = _ask(8)
    elif scheme == ModulationScheme.BPSK:
        pts = np.array([1.0, -1.0], dtype=np.complex128)
    elif scheme == ModulationScheme.QPSK:
        pts = _normalize(np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]))
    elif scheme in (ModulationScheme.PSK8, ModulationScheme.PSK16, ModulationScheme.PSK32):
        pts = _psk(scheme.order)
    elif scheme == ModulationScheme.APSK16:
        # DVB-S2 4+12, gamma = 2.70
        pts = _apsk((4, 12), (1.0, 2.70), (np.pi / 4, 0.0))
    elif scheme == ModulationScheme.APSK32:
        # DVB-S2 4+12+16, gamma1 = 2.72, gamma2 = 4.87
        pts = _apsk((4, 12, 16), (1.0, 2.72, 4.87), (np.pi / 4, 0.0, np.pi / 16))
    elif scheme == ModulationScheme.APSK64:
        pts = _apsk((16,) * 4, (1.0, 3.0, 5.0, 7.0), (0.0, np.pi / 16) * 2)
    elif scheme == ModulationScheme.APSK128:
        pts = _apsk((16,) * 8, tuple(1.0 + 2.0 * i for i in range(8)), (0.0, np.pi / 16) * 4)
    elif scheme in (ModulationScheme.QAM16, ModulationScheme.QAM64, ModulationScheme.QAM256):
        pts = _square_qam(scheme.order)
    elif scheme in (ModulationScheme.QAM32, ModulationScheme.QAM128):
        pts = _cross_qam(scheme.order)
    else:  # pragma: no cover
        raise UnsupportedSchemeError(scheme)
    pts.setflags(write=False)
    return pts


# ---------------------------------------------------------------------------
# timing signal / sampling function / labels
# ---------------------------------------------------------------------------

def toggle_indices(n_samples: int, sps: float, t0: float) -> np.ndarray:
    """Indices where the timing square wave flips: round((m + t0) * sps), m = 0, 1, ..."""
    if sps < 1.0:
        raise ValueError(f"sps must be >= 1, got {sps}")
    if not 0.0 <= t0 <= 0.5:
        raise ValueError(f"t0 must be in [0, 0.5], got {t0}")
    n_max = int(math.ceil(n_samples / sps)) + 2
    idx = round_half_up((t0 + np.arange(n_max)) * sps)
    return idx[idx < n_samples]


def timing_signal(n_samples: int, sps: float, t0: float) -> np.ndarray:
    """Binary vector starting at 0 that toggles at each symbol sampling instant.

    A toggle landing on index 0 has no visible edge and leaves the leading
    value at 0.
    """
    if n_samples == 0:
        raise EmptyInputError("timing signal of length 0")
    idx = toggle_indices(n_samples, sps, t0)
    marks = np.zeros(n_samples, dtype=np.int64)
    marks[idx] = 1
    z4 = (np.cumsum(marks) % 2).astype(np.uint8)
    if z4[0]:
        z4 ^= 1
    return z4


def cfo_rotation(f0, n: int) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin of the downmix angle 2*pi*f0*k, k = 0..n-1.

    Shared by the autodiff op and the plain demodulator so both produce
    bit-identical rotations; f0 may be scalar or broadcastable (B, 1).
    """
    k = np.arange(n, dtype=np.float64)
    theta = 2.0 * np.pi * f0 * k
    return np.cos(theta), np.sin(theta)


def mix_down(xr, xi, c, s) -> tuple[np.ndarray, np.ndarray]:
    """Multiply (xr + j*xi) by (c - j*s) in a fixed operation order."""
    return xr * c + xi * s, xi * c - xr * s


def transition_indices(z4: np.ndarray) -> np.ndarray:
    """Indices i with z4[i] != z4[i+1] (the positions kept by sample_at_transitions)."""
    z4 = np.asarray(z4)
    return np.nonzero(z4[:-1] != z4[1:])[0]


def transition_mask(z4: np.ndarray) -> np.ndarray:
    """Batched 0/1 mask of transition positions; trailing column is 0.

    Accepts (..., N); compares along the last axis.
    """
    z4 = np.asarray(z4)
    mask = np.zeros(z4.shape, dtype=np.float64)
    mask[..., :-1] = z4[..., :-1] != z4[..., 1:]
    return mask


def sample_at_transitions(x: np.ndarray, z4: np.ndarray) -> np.ndarray:
    """Zero out everything except samples sitting at a timing-vector transition.

    out[i] = x[i] when z4[i] != z4[i+1], else 0; the final index has no
    successor and is always 0.
    """
    x = np.asarray(x)
    z4 = np.asarray(z4)
    if x.shape[-1] != z4.shape[-1]:
        raise DimensionError(f"length mismatch: {x.shape[-1]} vs {z4.shape[-1]}")
    out = np.zeros_like(x)
    idx = transition_indices(z4)
    out[..., idx] = x[..., idx]
    return out


def one_hot(scheme: ModulationScheme, universe: Sequence[ModulationScheme]) -> np.ndarray:
    try:
        pos = list(universe).index(scheme)
    except ValueError:
        raise UnknownClassError(f"{scheme} not in universe") from None
    v = np.zeros(len(universe), dtype=np.float64)
    v[pos] = 1.0
    return v


def n_received(n_symbols: int, sps: float) -> int:
    """Received length for n_symbols at sps samples per symbol: n_symbols * ceil(sps)."""
    if n_symbols < 1:
        raise ValueError("n_symbols must be >= 1")
    if sps < 1.0:
        raise ValueError("sps must be >= 1")
    return int(n_symbols) * int(math.ceil(sps))


# ---------------------------------------------------------------------------
# parameter / record types
# ---------------------------------------------------------------------------

@dataclass
class SignalParams:
    """Ground-truth generation parameters of one sample."""

    scheme: ModulationScheme
    n_symbols: int
    sps: float                      # samples per symbol (symbol period / sample period)
    rolloff: float
    t0: float                       # sampling phase offset, fraction of a symbol period
    f0: float                       # carrier frequency offset, cycles per sample
    phi0: float                     # phase offset, radians
    channel_taps: np.ndarray        # 3 complex taps, index 0 = line of sight
    delay_spread: float             # samples
    snr_db: float

    def __post_init__(self):
        self.channel_taps = np.asarray(self.channel_taps, dtype=np.complex128)
        if self.channel_taps.shape != (3,):
            raise DimensionError("channel_taps must hold exactly 3 taps")
        if not 0.0 <= self.t0 <= 0.5:
            raise ValueError(f"t0 out of range: {self.t0}")
        if self.sps < 1.0:
            raise ValueError(f"sps out of range: {self.sps}")


@dataclass
class LabeledSample:
    """One training record: input y plus the five reference outputs."""

    y: np.ndarray                   # received, length n_r
    z1: np.ndarray                  # noise-free received
    z2: np.ndarray                  # pre-CFO (post-channel) signal
    z3: np.ndarray                  # channel-free modulator samples
    z4: np.ndarray                  # binary timing vector
    z5: np.ndarray                  # one-hot class label
    params: SignalParams
    symbols: np.ndarray             # complex symbols (linear) or data bits (continuous-phase)

    def __post_init__(self):
        n = len(self.y)
        if not (len(self.z1) == len(self.z2) == len(self.z3) == len(self.z4) == n):
            raise DimensionError("y/z1/z2/z3/z4 must share one length")


@dataclass
class DemodReport:
    """Output of one demodulation run."""

    predicted_scheme: ModulationScheme
    decoded_symbols: np.ndarray     # constellation indices
    ser: Optional[float]            # None when no reference was available
    rx_params: "object" = None      # RxParams; kept loose to avoid an import cycle
    flops: "object" = None          # FlopReport
    compared_symbols: int = 0       # symbols the ser was measured over

    def __post_init__(self):
        if self.ser is not None and not 0.0 <= self.ser <= 1.0:
            raise ValueError(f"ser out of range: {self.ser}")
