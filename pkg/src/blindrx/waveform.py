"""Baseband signal synthesis.

Builds impaired records for training and evaluation: random symbols are pulse
shaped (or CPM modulated), passed through a sparse 3-tap multipath channel,
rotated by a carrier frequency/phase offset, and hit with AWGN. Every
intermediate signal is kept as ground truth.

Time conventions, shared with the timing primitives in ``sigcore``:

- ``sps`` is the symbol period in samples and may be fractional,
- symbol ``i`` peaks at sample ``(i + t0) * sps``; the waveform is evaluated
  directly at those fractional offsets rather than via integer-rate
  resampling,
- the carrier offset ``f0`` is in cycles per sample, ``phi0`` in radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np

from .exceptions import DegenerateSnrError, EmptyInputError, UnsupportedSchemeError
from .sigcore import (
    CONTINUOUS_PHASE,
    LINEAR,
    LabeledSample,
    ModulationScheme,
    SignalParams,
    constellation,
    n_received,
    one_hot,
    timing_signal,
    toggle_indices,
)

GMSK_BT = 0.3
CPM_INDEX = 0.5          # modulation index h for both GMSK and CPFSK
GMSK_PULSE_SPAN = 3.0    # symbol periods kept of the Gaussian frequency pulse


# ---------------------------------------------------------------------------
# root-raised-cosine pulse
# ---------------------------------------------------------------------------

def rrc_pulse(t, rolloff: float):
    """Root-raised-cosine pulse, unit symbol period, not normalized.

    Removable singularities at t = 0 and |t| = 1/(4*rolloff) are patched with
    their limits.
    """
    b = float(rolloff)
    t = np.asarray(t, dtype=np.float64)
    if b < 0.0 or b > 1.0:
        raise ValueError(f"rolloff out of [0, 1]: {b}")
    if b == 0.0:
        return np.sinc(t)
    den = np.pi * t * (1.0 - (4.0 * b * t) ** 2)
    safe = np.abs(den) > 1e-8
    num = np.sin(np.pi * t * (1.0 - b)) + 4.0 * b * t * np.cos(np.pi * t * (1.0 + b))
    out = np.empty_like(t)
    np.divide(num, den, out=out, where=safe)
    at_zero = np.abs(t) < 1e-8
    out[at_zero] = 1.0 - b + 4.0 * b / np.pi
    at_pole = ~safe & ~at_zero
    out[at_pole] = (b / math.sqrt(2.0)) * (
        (1.0 + 2.0 / np.pi) * math.sin(np.pi / (4.0 * b))
        + (1.0 - 2.0 / np.pi) * math.cos(np.pi / (4.0 * b))
    )
    return out


@dataclass(frozen=True)
class RrcFilter:
    """Sampled RRC pulse with unit-energy taps, symmetric about the center."""

    taps: np.ndarray
    rolloff: float
    span_symbols: int
    sps: float

    @classmethod
    def design(cls, sps: float, rolloff: float, span_symbols: int = 8) -> "RrcFilter":
        if sps < 1.0:
            raise ValueError(f"sps must be >= 1, got {sps}")
        half = int(math.floor(span_symbols / 2 * sps))
        k = np.arange(-half, half + 1, dtype=np.float64)
        taps = rrc_pulse(k / sps, rolloff)
        taps = taps / math.sqrt(float(np.sum(taps**2)))
        taps.setflags(write=False)
        return cls(taps=taps, rolloff=rolloff, span_symbols=span_symbols, sps=sps)

    @property
    def amplitude_scale(self) -> float:
        """Factor that maps raw pulse values onto the unit-energy tap scale."""
        return float(self.taps[len(self.taps) // 2] / rrc_pulse(0.0, self.rolloff))

    def __post_init__(self):
        t = self.taps
        if abs(float(np.sum(t**2)) - 1.0) > 1e-9:
            raise ValueError("taps are not unit energy")
        if not np.allclose(t, t[::-1], atol=1e-12):
            raise ValueError("taps are not symmetric")


# ---------------------------------------------------------------------------
# modulators
# ---------------------------------------------------------------------------

def modulate_linear(symbols: np.ndarray, filt: RrcFilter, sps: float, t0: float,
                    n_out: Optional[int] = None) -> np.ndarray:
    """Pulse-shaped waveform with symbol i peaking at sample (i + t0) * sps.

    The pulse is evaluated at exact fractional offsets so non-integer symbol
    periods need no resampling stage.
    """
    symbols = np.asarray(symbols, dtype=np.complex128)
    if symbols.size == 0:
        raise EmptyInputError("no symbols to modulate")
    if n_out is None:
        n_out = n_received(len(symbols), sps)
    if n_out < 1:
        raise ValueError("n_out must be >= 1")
    half_span = filt.span_symbols / 2.0
    a = filt.amplitude_scale
    x = np.zeros(n_out, dtype=np.complex128)
    for i, s in enumerate(symbols):
        peak = (i + t0) * sps
        k_lo = max(0, int(math.ceil(peak - half_span * sps)))
        k_hi = min(n_out - 1, int(math.floor(peak + half_span * sps)))
        if k_hi < k_lo:
            continue
        k = np.arange(k_lo, k_hi + 1)
        x[k_lo:k_hi + 1] += s * a * rrc_pulse((k - peak) / sps, filt.rolloff)
    return x


def _gaussian_freq_pulse(u: np.ndarray, bt: float) -> np.ndarray:
    # rect of one symbol period smoothed by a Gaussian filter; integral 1/2
    c = 2.0 * np.pi * bt / math.sqrt(math.log(2.0))
    q = lambda z: 0.5 * math.erfc(z / math.sqrt(2.0))
    return 0.5 * np.array([q(c * (v - 0.5)) - q(c * (v + 0.5)) for v in u])


@lru_cache(maxsize=8)
def _cpm_phase_table(scheme: ModulationScheme) -> Tuple[np.ndarray, np.ndarray]:
    """Phase pulse q(u) = integral of the frequency pulse; q(-inf)=0, q(inf)=1/2."""
    if scheme == ModulationScheme.CPFSK:
        u = np.array([0.0, 1.0])
        return u, np.array([0.0, 0.5])
    span = GMSK_PULSE_SPAN
    step = 1.0 / 512.0
    u = np.arange(0.5 - span / 2, 0.5 + span / 2 + step, step)
    g = _gaussian_freq_pulse(u, GMSK_BT)
    q = np.concatenate([[0.0], np.cumsum((g[1:] + g[:-1]) * 0.5 * step)])
    q *= 0.5 / q[-1]
    return u, q


def modulate_cpm(bits: np.ndarray, scheme: ModulationScheme, sps: float,
                 t0: float = 0.0, n_out: Optional[int] = None) -> np.ndarray:
    """Constant-envelope CPM waveform; GMSK (BT 0.3) or CPFSK (1REC), h = 0.5.

    Bit i starts contributing phase at sample (i + t0) * sps, matching the
    linear modulator's symbol instants.
    """
    if scheme.kind != CONTINUOUS_PHASE:
        raise UnsupportedSchemeError(f"{scheme.value} is not a continuous-phase scheme")
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size == 0:
        raise EmptyInputError("no bits to modulate")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0/1")
    if n_out is None:
        n_out = n_received(len(bits), sps)
    signs = 2.0 * bits - 1.0
    grid_u, grid_q = _cpm_phase_table(scheme)
    k = np.arange(n_out, dtype=np.float64)
    phase = np.zeros(n_out)
    for i, ai in enumerate(signs):
        u = k / sps - t0 - i
        phase += ai * np.interp(u, grid_u, grid_q, left=0.0, right=0.5)
    return np.exp(2j * np.pi * CPM_INDEX * phase)


# ---------------------------------------------------------------------------
# impairments
# ---------------------------------------------------------------------------

def _fractional_delay(x: np.ndarray, delay: float, width: int = 16) -> np.ndarray:
    """x(k - delay) via integer shift plus windowed-sinc interpolation."""
    n = len(x)
    n_int = int(round(delay))
    frac = delay - n_int
    if abs(frac) < 1e-9:
        shifted = np.zeros(n, dtype=np.complex128)
        if n_int < n:
            shifted[n_int:] = x[:n - n_int] if n_int >= 0 else x[-n_int:]
        return shifted
    j = np.arange(-width, width + 1, dtype=np.float64)
    kern = np.sinc(j - frac) * np.hamming(2 * width + 1)
    kern /= np.sum(kern)
    padded = np.zeros(n + 2 * width, dtype=np.complex128)
    padded[width:width + n] = x
    interp = np.convolve(padded, kern, mode="same")[width:width + n]
    shifted = np.zeros(n, dtype=np.complex128)
    if n_int < n:
        shifted[max(n_int, 0):] = interp[:n - n_int] if n_int >= 0 else interp[-n_int:]
    return shifted


def apply_channel(x: np.ndarray, taps: Sequence[complex], delay_spread: float) -> np.ndarray:
    """Sparse 3-path channel: tap p at delay p * delay_spread / 2 samples."""
    taps = np.asarray(taps, dtype=np.complex128)
    if taps.shape != (3,):
        raise ValueError("channel needs exactly 3 taps")
    x = np.asarray(x, dtype=np.complex128)
    out = np.zeros_like(x)
    for p, h in enumerate(taps):
        if h == 0:
            continue
        out += h * _fractional_delay(x, p * delay_spread / 2.0)
    return out


def apply_cfo_phase(x: np.ndarray, f0: float, phi0: float) -> np.ndarray:
    """out[k] = x[k] * exp(j*(2*pi*f0*k + phi0)); the t0 term of the carrier
    is folded into phi0, which only shifts the (already random) phase."""
    x = np.asarray(x, dtype=np.complex128)
    k = np.arange(len(x))
    return x * np.exp(1j * (2.0 * np.pi * f0 * k + phi0))


def add_awgn(x: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Circular complex AWGN at the requested SNR vs the measured power of x."""
    x = np.asarray(x, dtype=np.complex128)
    if math.isinf(snr_db) and snr_db > 0:
        return x.copy()
    power = float(np.mean(np.abs(x) ** 2))
    if power <= 0.0:
        raise DegenerateSnrError("zero-energy signal has no defined SNR")
    nvar = power * 10.0 ** (-snr_db / 10.0)
    scale = math.sqrt(nvar / 2.0)
    noise = rng.normal(0.0, scale, len(x)) + 1j * rng.normal(0.0, scale, len(x))
    return x + noise


# ---------------------------------------------------------------------------
# dataset specifications
# ---------------------------------------------------------------------------

_DATASET1_UNIVERSE = (
    ModulationScheme.BPSK, ModulationScheme.QPSK, ModulationScheme.PSK8,
    ModulationScheme.QAM16, ModulationScheme.QAM64, ModulationScheme.GMSK,
    ModulationScheme.CPFSK, ModulationScheme.ASK4,
)

_DATASET2_UNIVERSE = (
    ModulationScheme.OOK, ModulationScheme.ASK4, ModulationScheme.ASK8,
    ModulationScheme.BPSK, ModulationScheme.QPSK, ModulationScheme.PSK8,
    ModulationScheme.PSK16, ModulationScheme.PSK32, ModulationScheme.APSK16,
    ModulationScheme.APSK32, ModulationScheme.APSK64, ModulationScheme.APSK128,
    ModulationScheme.QAM16, ModulationScheme.QAM32, ModulationScheme.QAM64,
    ModulationScheme.QAM128, ModulationScheme.QAM256, ModulationScheme.GMSK,
    ModulationScheme.CPFSK,
)


@dataclass(frozen=True)
class DatasetSpec:
    """Parameter ranges defining one synthetic dataset."""

    universe: Tuple[ModulationScheme, ...]
    f0_range: Tuple[float, float]
    snr_range_db: Tuple[float, float]
    sps_range: Tuple[float, float]
    rolloff_set: Tuple[float, ...] = (0.15, 0.35, 0.55)
    t0_range: Tuple[float, float] = (0.0, 0.5)
    phi0_range: Tuple[float, float] = (0.0, 2.0 * np.pi)
    delay_spread_range: Tuple[float, float] = (0.5, 4.0)
    nlos_mean_mags: Tuple[float, float] = (0.5, 0.1)
    n_r: int = 128
    seed: int = 0

    def __post_init__(self):
        if len(self.universe) == 0:
            raise ValueError("empty modulation universe")
        if self.n_r <= 0:
            raise ValueError("n_r must be positive")
        for lo, hi in (self.f0_range, self.snr_range_db, self.sps_range,
                       self.t0_range, self.phi0_range, self.delay_spread_range):
            if hi < lo:
                raise ValueError("empty range in dataset spec")

    def to_dict(self) -> dict:
        return {
            "universe": [m.value for m in self.universe],
            "f0_range": list(self.f0_range),
            "snr_range_db": list(self.snr_range_db),
            "sps_range": list(self.sps_range),
            "rolloff_set": list(self.rolloff_set),
            "t0_range": list(self.t0_range),
            "phi0_range": list(self.phi0_range),
            "delay_spread_range": list(self.delay_spread_range),
            "nlos_mean_mags": list(self.nlos_mean_mags),
            "n_r": self.n_r,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(
            universe=tuple(ModulationScheme(v) for v in d["universe"]),
            f0_range=tuple(d["f0_range"]),
            snr_range_db=tuple(d["snr_range_db"]),
            sps_range=tuple(d["sps_range"]),
            rolloff_set=tuple(d["rolloff_set"]),
            t0_range=tuple(d["t0_range"]),
            phi0_range=tuple(d["phi0_range"]),
            delay_spread_range=tuple(d["delay_spread_range"]),
            nlos_mean_mags=tuple(d["nlos_mean_mags"]),
            n_r=int(d["n_r"]),
            seed=int(d.get("seed", 0)),
        )


def dataset1() -> DatasetSpec:
    """8 modulations, mild offsets, SNR -20..20 dB, 7..9 samples per symbol."""
    return DatasetSpec(
        universe=_DATASET1_UNIVERSE,
        f0_range=(0.0, 0.0025),
        snr_range_db=(-20.0, 20.0),
        sps_range=(7.0, 9.0),
    )


def dataset2() -> DatasetSpec:
    """19 modulations up to QAM256, SNR -10..40 dB, 3..16 samples per symbol."""
    return DatasetSpec(
        universe=_DATASET2_UNIVERSE,
        f0_range=(0.0, 0.005),
        snr_range_db=(-10.0, 40.0),
        sps_range=(3.0, 16.0),
    )


def toy_dataset() -> DatasetSpec:
    """Two easy modulations, identity channel; small enough to train quickly."""
    return DatasetSpec(
        universe=(ModulationScheme.BPSK, ModulationScheme.QPSK),
        f0_range=(0.0, 0.0025),
        snr_range_db=(0.0, 20.0),
        sps_range=(7.0, 9.0),
        rolloff_set=(0.35,),
        delay_spread_range=(0.0, 0.0),
        nlos_mean_mags=(0.0, 0.0),
    )


_RAYLEIGH_MEAN = math.sqrt(math.pi / 2.0)


def draw_params(spec: DatasetSpec, rng: np.random.Generator) -> SignalParams:
    """Uniform draw of one parameter set. The draw order is fixed; changing it
    silently breaks reproducibility of previously generated datasets."""
    scheme = spec.universe[int(rng.integers(len(spec.universe)))]
    sps = float(rng.uniform(*spec.sps_range))
    rolloff = float(spec.rolloff_set[int(rng.integers(len(spec.rolloff_set)))])
    t0 = float(rng.uniform(*spec.t0_range))
    f0 = float(rng.uniform(*spec.f0_range))
    phi0 = float(rng.uniform(*spec.phi0_range))
    # same draw as rng.uniform(lo, hi), written out so a degenerate range
    # (including the noiseless inf, inf) cannot overflow in hi - lo
    snr_lo, snr_hi = spec.snr_range_db
    u = float(rng.uniform())
    snr_db = snr_lo if snr_lo == snr_hi else snr_lo + (snr_hi - snr_lo) * u
    mags = [1.0] + [m / _RAYLEIGH_MEAN * float(rng.rayleigh(1.0)) if m > 0 else 0.0
                    for m in spec.nlos_mean_mags]
    phases = rng.uniform(0.0, 2.0 * np.pi, 3)
    taps = np.array(mags) * np.exp(1j * phases)
    delay_spread = float(rng.uniform(*spec.delay_spread_range))
    n_symbols = len(toggle_indices(spec.n_r, sps, t0))
    return SignalParams(
        scheme=scheme, n_symbols=n_symbols, sps=sps, rolloff=rolloff, t0=t0,
        f0=f0, phi0=phi0, channel_taps=taps, delay_spread=delay_spread,
        snr_db=snr_db,
    )


def clean_params(scheme: ModulationScheme, sps: float = 8.0, rolloff: float = 0.35,
                 n_r: int = 128, snr_db: float = math.inf) -> SignalParams:
    """Impairment-free parameters: identity channel, no offsets, no noise."""
    return SignalParams(
        scheme=scheme, n_symbols=len(toggle_indices(n_r, sps, 0.0)), sps=sps,
        rolloff=rolloff, t0=0.0, f0=0.0, phi0=0.0,
        channel_taps=np.array([1.0, 0.0, 0.0], dtype=np.complex128),
        delay_spread=0.0, snr_db=snr_db,
    )


def generate_sample(spec: DatasetSpec, rng: np.random.Generator,
                    params: Optional[SignalParams] = None) -> LabeledSample:
    """One fully labeled record; pass explicit params to pin the impairments."""
    p = params if params is not None else draw_params(spec, rng)
    n_r = spec.n_r
    z4 = timing_signal(n_r, p.sps, p.t0)
    if p.n_symbols < 1:
        raise EmptyInputError("no symbol instants inside the window")
    if p.scheme.kind == LINEAR:
        points = constellation(p.scheme)
        idx = rng.integers(0, len(points), p.n_symbols)
        symbols = points[idx]
        filt = RrcFilter.design(p.sps, p.rolloff)
        z3 = modulate_linear(symbols, filt, p.sps, p.t0, n_out=n_r)
    else:
        bits = rng.integers(0, 2, p.n_symbols)
        symbols = bits.astype(np.int8)
        z3 = modulate_cpm(bits, p.scheme, p.sps, t0=p.t0, n_out=n_r)
    z2 = apply_channel(z3, p.channel_taps, p.delay_spread)
    z1 = apply_cfo_phase(z2, p.f0, p.phi0)
    y = add_awgn(z1, p.snr_db, rng)
    z5 = one_hot(p.scheme, spec.universe)
    return LabeledSample(y=y, z1=z1, z2=z2, z3=z3, z4=z4, z5=z5, params=p,
                         symbols=symbols)


def stream_epoch(spec: DatasetSpec, n: int, seed: int) -> Iterator[LabeledSample]:
    """Lazily yield n samples; (spec.seed, seed, i) keys each record, so a new
    epoch seed gives fresh data and the same seed replays exactly."""
    if n < 1:
        raise ValueError("n must be >= 1")
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, seed, i]))
        yield generate_sample(spec, rng)
