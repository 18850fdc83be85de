"""Training objectives for the five receiver stages.

Every loss maps (prediction, target) to a scalar graph node.  Predictions
are live Tensors; targets are plain arrays (ground truth never needs a
gradient).  Complex sequences travel as stacked I/Q channels of shape
(B, 2, N); the helpers below promote bare complex arrays so tests can
call the losses directly on waveforms.

All sequence losses normalize by the full record length N, including the
sampled variant: the sum over the handful of surviving symbol positions
is still divided by N, which keeps the stage weights comparable without
a data-dependent rescale.
"""

from __future__ import annotations

import dataclasses
import json
from typing import Mapping, Sequence

import numpy as np

from .exceptions import DimensionError
from .nn.tensor import Tensor, magnitude, minimum2
from .sigcore import batch_to_iq, transition_mask

__all__ = [
    "PROB_EPS",
    "LossWeights",
    "loss_mse",
    "loss_phase_insensitive",
    "loss_sampled_phase_insensitive",
    "loss_timing",
    "loss_classification",
    "loss_total",
]

# Probability floor for both cross entropies.  log(1e-7) ~ -16.1, large
# enough to punish confident mistakes without overflowing float64 grads.
PROB_EPS = 1e-7


def _as_iq_tensor(x) -> Tensor:
    """Promote a prediction or target to a (B, 2, N) Tensor."""
    if isinstance(x, Tensor):
        if x.data.ndim == 2 and x.data.shape[0] == 2:
            return x.reshape((1,) + x.data.shape)
        if x.data.ndim != 3 or x.data.shape[1] != 2:
            raise DimensionError(
                f"expected I/Q tensor shaped (B, 2, N), got {x.data.shape}"
            )
        return x
    arr = np.asarray(x)
    if np.iscomplexobj(arr):
        return Tensor(batch_to_iq(arr))
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[0] == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != 2:
        raise DimensionError(f"expected I/Q array shaped (B, 2, N), got {arr.shape}")
    return Tensor(arr)


def _as_2d_tensor(x, name: str) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    if x.data.ndim == 1:
        x = x.reshape((1, x.data.shape[0]))
    if x.data.ndim != 2:
        raise DimensionError(f"{name} must be (B, N), got {x.data.shape}")
    return x


def _check_aligned(a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"shape mismatch {a.data.shape} vs {b.data.shape}")


def loss_mse(pred, target) -> Tensor:
    """Mean squared complex error, (1/N) * sum_k |pred_k - target_k|^2."""
    p = _as_iq_tensor(pred)
    t = _as_iq_tensor(target)
    _check_aligned(p, t)
    batch, _, n = p.data.shape
    d = p - t
    return (d * d).sum() * (1.0 / (batch * n))


def _hermitian_terms(p: Tensor, t: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Per-record <p,p>, <t,t> and |<p,t>| with conjugation on p."""
    pr, pi = p[:, 0, :], p[:, 1, :]
    tr, ti = t[:, 0, :], t[:, 1, :]
    pp = (pr * pr + pi * pi).sum(axis=1)
    tt = (tr * tr + ti * ti).sum(axis=1)
    re = (pr * tr + pi * ti).sum(axis=1)
    im = (pr * ti - pi * tr).sum(axis=1)
    return pp, tt, magnitude(re, im)


def loss_phase_insensitive(pred, target) -> Tensor:
    """Squared error minimized over a global phase rotation of the target.

    (1/N) * (<p,p> + <t,t> - 2|<p,t>|), which equals
    min_phi (1/N) * ||p - t*exp(j*phi)||^2.
    """
    p = _as_iq_tensor(pred)
    t = _as_iq_tensor(target)
    _check_aligned(p, t)
    batch, _, n = p.data.shape
    pp, tt, m = _hermitian_terms(p, t)
    per_record = pp + tt - m * 2.0
    return per_record.sum() * (1.0 / (batch * n))


def loss_sampled_phase_insensitive(pred, target, z4) -> Tensor:
    """Phase-insensitive error restricted to symbol instants.

    Both sequences are masked by the ground-truth timing transitions before
    the inner products, so only the N_s sampled positions contribute.  The
    normalization stays 1/N.
    """
    p = _as_iq_tensor(pred)
    t = _as_iq_tensor(target)
    _check_aligned(p, t)
    z4 = np.asarray(z4)
    if z4.ndim == 1:
        z4 = z4[None]
    if z4.shape != (p.data.shape[0], p.data.shape[2]):
        raise DimensionError(
            f"timing signal shape {z4.shape} does not match records "
            f"{(p.data.shape[0], p.data.shape[2])}"
        )
    mask = transition_mask(z4).astype(np.float64)[:, None, :]
    return loss_phase_insensitive(p * mask, t * mask)


def loss_timing(z4, z4_hat) -> Tensor:
    """Binary cross entropy tolerant of a global polarity flip.

    min{ BCE(z4, z4_hat), BCE(1 - z4, z4_hat) }, each BCE averaged over the
    record, because the square-wave convention (start high or start low)
    carries no information.
    """
    p = _as_2d_tensor(z4_hat, "z4_hat")
    z = np.atleast_2d(np.asarray(z4, dtype=np.float64))
    if z.shape != p.data.shape:
        raise DimensionError(f"shape mismatch {z.shape} vs {p.data.shape}")
    batch, n = z.shape
    q = p.clip(PROB_EPS, 1.0 - PROB_EPS)
    log_q = q.log()
    log_1q = (-q + 1.0).log()
    straight = -(log_q * z + log_1q * (1.0 - z)).sum(axis=1) * (1.0 / n)
    flipped = -(log_q * (1.0 - z) + log_1q * z).sum(axis=1) * (1.0 / n)
    return minimum2(straight, flipped).sum() * (1.0 / batch)


def loss_classification(z5, z5_hat) -> Tensor:
    """Cross entropy against a one-hot class label."""
    p = _as_2d_tensor(z5_hat, "z5_hat")
    z = np.atleast_2d(np.asarray(z5, dtype=np.float64))
    if z.shape != p.data.shape:
        raise DimensionError(f"shape mismatch {z.shape} vs {p.data.shape}")
    batch = z.shape[0]
    q = p.clip(PROB_EPS, 1.0 - PROB_EPS)
    return -(q.log() * z).sum() * (1.0 / batch)


@dataclasses.dataclass(frozen=True)
class LossWeights:
    """Stage weights for the combined objective.

    All five default to 1; individual stages are switched off by zeroing
    their weight rather than by removing the term.
    """

    reconstruction: float = 1.0
    equalized: float = 1.0
    sampled: float = 1.0
    timing: float = 1.0
    classification: float = 1.0

    def __post_init__(self) -> None:
        w = self.as_tuple()
        if any(v < 0 for v in w):
            raise ValueError(f"loss weights must be non-negative, got {w}")
        if not any(v > 0 for v in w):
            raise ValueError("at least one loss weight must be positive")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (
            self.reconstruction,
            self.equalized,
            self.sampled,
            self.timing,
            self.classification,
        )

    def to_json(self) -> str:
        keys = ("w1", "w2", "w3", "w4", "w5")
        return json.dumps(dict(zip(keys, self.as_tuple())))

    @classmethod
    def from_json(cls, text: str | Mapping[str, float]) -> "LossWeights":
        obj = json.loads(text) if isinstance(text, str) else dict(text)
        keys = ("w1", "w2", "w3", "w4", "w5")
        unknown = set(obj) - set(keys)
        if unknown:
            raise ValueError(f"unknown loss weight keys {sorted(unknown)}")
        defaults = cls()
        vals = [float(obj.get(k, d)) for k, d in zip(keys, defaults.as_tuple())]
        return cls(*vals)


def loss_total(components: Sequence[Tensor], weights: LossWeights | None = None) -> Tensor:
    """Weighted sum of the five stage losses, in stage order."""
    if weights is None:
        weights = LossWeights()
    w = weights.as_tuple()
    if len(components) != len(w):
        raise DimensionError(f"expected {len(w)} loss terms, got {len(components)}")
    total = components[0] * w[0]
    for term, wi in zip(components[1:], w[1:]):
        total = total + term * wi
    return total
