"""Receiver model: per-stage estimator networks around the linear path.

The heavy lifting stays in the filtering chain; small convolutional
estimators produce its parameters (noise-filter taps, carrier offset,
equalizer taps), a recurrent pair produces the timing square wave, and a
classifier names the modulation.  Each estimator trains against its own
stage target and gradients never cross a stage boundary, so every network
adapts to whatever the previous stage actually outputs rather than to an
idealized input.

Heads that feed the signal path start as exact pass-throughs (delta taps,
zero frequency) by zero-initializing their weights, which keeps the chain
stable before any training has happened.
"""

from __future__ import annotations

import dataclasses
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import DimensionError, TrainingFault
from .losses import (
    LossWeights,
    loss_classification,
    loss_mse,
    loss_phase_insensitive,
    loss_sampled_phase_insensitive,
    loss_timing,
    loss_total,
)
from .nn import (
    LSTM,
    Conv1d,
    Dense,
    Module,
    ResidualBlock,
    Tensor,
    cfo_mix,
    complex_fir,
    global_avg_pool,
    stop_gradient,
)
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .sigcore import LabeledSample, batch_to_iq
from .sigpath import EQMF_TAP_COUNT, NOISE_TAP_COUNT, RxParams

__all__ = [
    "STAGES",
    "ABLATION_LADDER",
    "ABLATION_LABELS",
    "DpnConfig",
    "DpnModel",
    "infer",
    "training_forward",
    "count_nn_flops",
    "save_model",
    "load_model",
]

STAGES = ("noise", "cfo", "eqmf", "timing")

# Cumulative stage subsets for the ablation study, weakest first: no
# signal path at all, then one stage added at a time.
ABLATION_LADDER: Tuple[frozenset, ...] = tuple(
    frozenset(STAGES[:i]) for i in range(len(STAGES) + 1)
)
ABLATION_LABELS: Tuple[str, ...] = ("DPN0", "DPN1", "DPN2", "DPN3", "full")


@dataclasses.dataclass(frozen=True)
class DpnConfig:
    """Model shape and training-time behavior.

    All sizes are exposed because the desk-scale experiments run a smaller
    network than the defaults; the defaults land at roughly 1.4e5
    trainable parameters.
    """

    class_count: int
    stage_mask: frozenset = frozenset(STAGES)
    feature_channels: int = 32
    n_residual_blocks: int = 3
    conv_kernel: int = 5
    lstm1_units: int = 32
    lstm2_units: int = 32
    inject_noise_before_eqmf: bool = True
    inject_snr_range_db: Tuple[float, float] = (10.0, 40.0)
    aux_f0_weight: float = 0.0
    f0_max: float = 0.02
    classifier_input: str = "z3"

    def __post_init__(self):
        object.__setattr__(self, "stage_mask", frozenset(self.stage_mask))
        if not self.stage_mask <= set(STAGES):
            raise ValueError(f"unknown stages {sorted(self.stage_mask - set(STAGES))}")
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        if self.feature_channels < 1 or self.n_residual_blocks < 0:
            raise ValueError("bad feature extractor size")
        if self.conv_kernel % 2 == 0:
            raise ValueError("conv kernel must be odd")
        if self.lstm1_units != self.lstm2_units:
            # the scanner hands its final state to the generator directly
            raise ValueError("lstm1_units and lstm2_units must match")
        lo, hi = self.inject_snr_range_db
        if hi < lo:
            raise ValueError("inject SNR range reversed")
        if self.classifier_input not in ("y", "z1", "z2", "z3"):
            raise ValueError(f"bad classifier input {self.classifier_input!r}")
        if self.aux_f0_weight < 0:
            raise ValueError("aux_f0_weight must be non-negative")
        if self.f0_max <= 0:
            raise ValueError("f0_max must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stage_mask"] = sorted(self.stage_mask)
        d["inject_snr_range_db"] = list(self.inject_snr_range_db)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DpnConfig":
        d = dict(d)
        d["stage_mask"] = frozenset(d.get("stage_mask", STAGES))
        d["inject_snr_range_db"] = tuple(d.get("inject_snr_range_db", (10.0, 40.0)))
        return cls(**d)


class FeatureExtractor(Module):
    """Conv stem plus a stack of residual blocks; input is 2-channel I/Q."""

    def __init__(self, channels: int, blocks: int, k: int, rng):
        self.stem = Conv1d(2, channels, k, rng)
        self.blocks = [ResidualBlock(channels, k, rng) for _ in range(blocks)]

    def __call__(self, x: Tensor) -> Tensor:
        h = self.stem(x).relu()
        for blk in self.blocks:
            h = blk(h).relu()
        return h


def _zero_head(conv: Conv1d, delta_index: Optional[int] = None) -> Conv1d:
    """Start a tap head as a constant: zero weights, optional delta bias."""
    conv.w.data[:] = 0.0
    if delta_index is not None:
        conv.b.data[delta_index] = 1.0
    return conv


class DpnModel(Module):
    """All trainable parameters, one sub-network per enabled stage."""

    def __init__(self, config: DpnConfig, rng: np.random.Generator):
        self.config = config
        c = config.feature_channels
        blocks = config.n_residual_blocks
        k = config.conv_kernel
        mask = config.stage_mask

        if "noise" in mask:
            self.fe_noise = FeatureExtractor(c, blocks, k, rng)
            self.noise_head = _zero_head(
                Conv1d(c, 2 * NOISE_TAP_COUNT, 1, rng),
                delta_index=(NOISE_TAP_COUNT - 1) // 2,
            )
        if "cfo" in mask:
            self.fe_freq = FeatureExtractor(c, blocks, k, rng)
            self.freq_head = Dense(c, 1, rng)
            self.freq_head.w.data[:] = 0.0
        if "eqmf" in mask:
            self.fe_eqmf = FeatureExtractor(c, blocks, k, rng)
            self.eqmf_head = _zero_head(
                Conv1d(c, 2 * EQMF_TAP_COUNT, 1, rng),
                delta_index=(EQMF_TAP_COUNT - 1) // 2,
            )
        if "timing" in mask:
            self.lstm_scan_net = LSTM(2, config.lstm1_units, rng)
            self.lstm_gen_net = LSTM(1, config.lstm2_units, rng)
            self.timing_head = Dense(config.lstm2_units, 1, rng)
        self.fe_class = FeatureExtractor(c, blocks, k, rng)
        self.class_head = Dense(c, config.class_count, rng)


def _normalized(iq: np.ndarray) -> Tensor:
    """Per-record unit-power copy for estimator inputs.

    Estimators should see scale-free signals; the linear path itself always
    consumes the raw waveform so tap gains stay physical.
    """
    power = np.mean(iq**2, axis=(1, 2), keepdims=True)
    rms = np.sqrt(np.where(power > 0.0, power, 1.0))
    return Tensor(iq / rms)


def _delta_taps_channels(batch: int, n: int) -> np.ndarray:
    taps = np.zeros((batch, 2, n))
    taps[:, 0, (n - 1) // 2] = 1.0
    return taps


def _forward(
    model: DpnModel,
    y: np.ndarray,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
) -> Dict[str, Tensor]:
    """Shared forward pass; returns every stage output as a graph node."""
    cfg = model.config
    mask = cfg.stage_mask
    iq = batch_to_iq(y)
    batch, _, length = iq.shape
    y_t = Tensor(iq)

    if "noise" in mask:
        feats = model.fe_noise(_normalized(iq))
        pooled = global_avg_pool(model.noise_head(feats))
        noise_taps = pooled.reshape((batch, 2, NOISE_TAP_COUNT))
        z1 = complex_fir(y_t, noise_taps, (NOISE_TAP_COUNT - 1) // 2)
    else:
        noise_taps = Tensor(_delta_taps_channels(batch, NOISE_TAP_COUNT))
        z1 = y_t
    u1 = stop_gradient(z1)

    if "cfo" in mask:
        feats = model.fe_freq(_normalized(u1.data))
        # Bounded estimate.  The phase loss is oscillatory in the frequency
        # error with a basin only a few 1/length wide; an unbounded head
        # escapes it within a handful of optimizer steps and never returns.
        f0 = model.freq_head(global_avg_pool(feats)).tanh() * cfg.f0_max
        z2 = cfo_mix(u1, f0)
    else:
        f0 = Tensor(np.zeros((batch, 1)))
        z2 = u1
    u2 = stop_gradient(z2)

    # Mid-path re-noising: the equalizer stage otherwise only ever sees
    # the clean output of a converged front end and overfits to it.
    if training and cfg.inject_noise_before_eqmf and "eqmf" in mask:
        if rng is None:
            raise ValueError("training forward needs an rng for noise injection")
        lo, hi = cfg.inject_snr_range_db
        snr = rng.uniform(lo, hi, (batch, 1, 1))
        power = np.mean(u2.data**2, axis=(1, 2), keepdims=True) * 2.0
        var = power * 10.0 ** (-snr / 10.0)
        u2 = Tensor(u2.data + np.sqrt(var / 2.0) * rng.standard_normal(u2.data.shape))

    if "eqmf" in mask:
        feats = model.fe_eqmf(_normalized(u2.data))
        pooled = global_avg_pool(model.eqmf_head(feats))
        eqmf_taps = pooled.reshape((batch, 2, EQMF_TAP_COUNT))
        z3 = complex_fir(u2, eqmf_taps, (EQMF_TAP_COUNT - 1) // 2)
    else:
        eqmf_taps = Tensor(_delta_taps_channels(batch, EQMF_TAP_COUNT))
        z3 = u2
    u3 = stop_gradient(z3)

    if "timing" in mask:
        units = cfg.lstm1_units
        seq = Tensor(np.ascontiguousarray(u3.data.transpose(0, 2, 1)))
        state = Tensor(np.zeros((batch, units)))
        _, h_t, c_t = model.lstm_scan_net(seq, state, Tensor(np.zeros((batch, units))))
        silent = Tensor(np.zeros((batch, length, 1)))
        steps, _, _ = model.lstm_gen_net(silent, h_t, c_t)
        logits = model.timing_head(steps.reshape((batch * length, units)))
        z4 = logits.reshape((batch, length)).sigmoid()
    else:
        z4 = Tensor(np.full((batch, length), 0.5))

    source = {"y": y_t, "z1": u1, "z2": u2, "z3": u3}[cfg.classifier_input]
    feats = model.fe_class(_normalized(source.data))
    z5 = model.class_head(global_avg_pool(feats)).softmax()

    return {
        "z1": z1, "z2": z2, "z3": z3, "z4": z4, "z5": z5,
        "noise_taps": noise_taps, "f0": f0, "eqmf_taps": eqmf_taps,
    }


def _to_complex(channels: np.ndarray) -> np.ndarray:
    return channels[0] + 1j * channels[1]


def infer(model: DpnModel, y: np.ndarray) -> Tuple[RxParams, np.ndarray, np.ndarray, np.ndarray]:
    """Estimate receiver parameters and the cleaned-up stage signals for one record."""
    y = np.asarray(y, dtype=np.complex128)
    if y.ndim != 1:
        raise DimensionError(f"expected one record, got shape {y.shape}")
    out = _forward(model, y[None, :], training=False)
    params = RxParams(
        noise_taps=_to_complex(out["noise_taps"].data[0]),
        f0_hat=float(out["f0"].data[0, 0]),
        eqmf_taps=_to_complex(out["eqmf_taps"].data[0]),
        timing=(out["z4"].data[0] >= 0.5).astype(np.uint8),
        class_scores=out["z5"].data[0],
    )
    return (
        params,
        _to_complex(out["z1"].data[0]),
        _to_complex(out["z2"].data[0]),
        _to_complex(out["z3"].data[0]),
    )


def _stack_batch(samples: Sequence[LabeledSample]):
    y = np.stack([s.y for s in samples])
    z = {
        "z1": np.stack([s.z1 for s in samples]),
        "z2": np.stack([s.z2 for s in samples]),
        "z3": np.stack([s.z3 for s in samples]),
        "z4": np.stack([s.z4 for s in samples]),
        "z5": np.stack([s.z5 for s in samples]),
    }
    return y, z


def training_forward(
    model: DpnModel,
    batch: Union[LabeledSample, Sequence[LabeledSample]],
    rng: Optional[np.random.Generator] = None,
    weights: Optional[LossWeights] = None,
) -> Tuple[List[Tensor], Tensor]:
    """One forward pass against ground truth; returns ([L1..L5], total)."""
    samples = [batch] if isinstance(batch, LabeledSample) else list(batch)
    y, z = _stack_batch(samples)
    out = _forward(model, y, rng=rng, training=True)

    components = [
        loss_mse(out["z1"], z["z1"]),
        loss_phase_insensitive(out["z2"], z["z2"]),
        loss_sampled_phase_insensitive(out["z3"], z["z3"], z["z4"]),
        loss_timing(z["z4"], out["z4"]),
        loss_classification(z["z5"], out["z5"]),
    ]
    total = loss_total(components, weights)
    if model.config.aux_f0_weight > 0.0:
        true_f0 = np.array([[s.params.f0] for s in samples])
        err = out["f0"] - true_f0
        total = total + (err * err).mean() * model.config.aux_f0_weight
    if not np.isfinite(total.data):
        raise TrainingFault(f"non-finite training loss {total.data!r}")
    return components, total


def _conv_flops(c_in: int, c_out: int, k: int, length: int) -> int:
    return 2 * c_in * c_out * k * length + c_out * length


def _dense_flops(d_in: int, d_out: int) -> int:
    return 2 * d_in * d_out + d_out


def _lstm_flops(d_in: int, d_hidden: int, length: int) -> int:
    return length * (2 * (d_in + d_hidden) * 4 * d_hidden + 4 * d_hidden)


def count_nn_flops(model: DpnModel, length: int = 128) -> int:
    """Multiply-add count of the estimator networks for one record.

    Convolutions, dense layers and LSTM matrix products are billed at
    2 ops per multiply-accumulate plus the bias adds; activations,
    pooling and normalization are not counted.
    """
    cfg = model.config
    c, k = cfg.feature_channels, cfg.conv_kernel
    fe = _conv_flops(2, c, k, length) + cfg.n_residual_blocks * 2 * _conv_flops(
        c, c, k, length
    )
    total = fe + _dense_flops(c, cfg.class_count)
    if "noise" in cfg.stage_mask:
        total += fe + _conv_flops(c, 2 * NOISE_TAP_COUNT, 1, length)
    if "cfo" in cfg.stage_mask:
        total += fe + _dense_flops(c, 1)
    if "eqmf" in cfg.stage_mask:
        total += fe + _conv_flops(c, 2 * EQMF_TAP_COUNT, 1, length)
    if "timing" in cfg.stage_mask:
        total += _lstm_flops(2, cfg.lstm1_units, length)
        total += _lstm_flops(1, cfg.lstm2_units, length)
        total += length * _dense_flops(cfg.lstm2_units, 1)
    return total


def save_model(path: str, model: DpnModel):
    """One-file checkpoint: weights plus the config needed to rebuild."""
    save_checkpoint(path, model.state_dict(), meta={"dpn_config": model.config.to_dict()})


def load_model(path: str) -> DpnModel:
    state, meta = load_checkpoint(path)
    if "dpn_config" not in meta:
        raise ValueError(f"{path} is not a model checkpoint (no config in meta)")
    model = DpnModel(DpnConfig.from_dict(meta["dpn_config"]), np.random.default_rng(0))
    model.load_state_dict(state)
    return model
