"""Training loop, evaluation suites and report shaping.

Training draws fresh samples every epoch from a seeded stream, validates
on a fixed set, and keeps the best-validation weights with a patience
cutoff.  Evaluation bins every metric by the per-record input SNR so the
outputs are plot-ready curves: estimator quality (output SNR, residual
carrier offset, timing error), classification accuracy with a confusion
matrix, and symbol error rates against the genie-aided conventional
receiver, including the chunked parameter-reuse comparison.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import math
import warnings
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dpn import DpnModel, count_nn_flops, infer, training_forward
from .exceptions import TrainingFault
from .losses import LossWeights, loss_total
from .nn import Adam
from .sigcore import LabeledSample, transition_indices
from .sigpath import (
    FlopReport,
    RxParams,
    baseline_genie_dsp,
    demod_chunked,
    run_signal_path,
    signal_path_flops,
    visible_reference,
)
from .waveform import DatasetSpec, generate_sample, stream_epoch

__all__ = [
    "SNR_BIN_WIDTH_DB",
    "TrainConfig",
    "TrainHistory",
    "SnrBinRow",
    "EvalReport",
    "train",
    "validation_set",
    "holdout_set",
    "estimated_symbol_period",
    "eval_params",
    "eval_classification",
    "eval_ser",
    "eval_ser_chunked",
    "chunk_experiment",
    "ChunkRunReport",
    "ablation_run",
]

SNR_BIN_WIDTH_DB = 2.5

# Stream-seed offsets keep the fixed validation/test draws disjoint from
# the per-epoch training draws (epochs use seed + 1, seed + 2, ...).
_VAL_SEED_OFFSET = 10_000_019
_TEST_SEED_OFFSET = 10_000_079
_INJECT_SEED_OFFSET = 20_000_003


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    dataset_spec: DatasetSpec
    epochs_max: int = 30
    samples_per_epoch: int = 10_000
    batch_size: int = 32
    early_stop_patience: int = 10
    loss_weights: LossWeights = LossWeights()
    learning_rate: float = 1e-3
    seed: int = 0
    validation_size: int = 1_000
    test_size: int = 1_000

    def __post_init__(self):
        counts = (
            self.epochs_max,
            self.samples_per_epoch,
            self.batch_size,
            self.early_stop_patience,
            self.validation_size,
            self.test_size,
        )
        if any(c < 1 for c in counts):
            raise ValueError(f"all counts must be >= 1, got {counts}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


@dataclasses.dataclass
class TrainHistory:
    train_loss: List[float] = dataclasses.field(default_factory=list)
    val_loss: List[float] = dataclasses.field(default_factory=list)
    val_components: List[List[float]] = dataclasses.field(default_factory=list)
    best_epoch: int = 0          # 1-based; 0 means never improved
    stopped_epoch: int = 0

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self))


def validation_set(config: TrainConfig) -> List[LabeledSample]:
    return list(
        stream_epoch(
            config.dataset_spec, config.validation_size,
            config.seed + _VAL_SEED_OFFSET,
        )
    )


def holdout_set(config: TrainConfig) -> List[LabeledSample]:
    return list(
        stream_epoch(
            config.dataset_spec, config.test_size, config.seed + _TEST_SEED_OFFSET
        )
    )


def _batches(samples, size):
    it = iter(samples)
    while True:
        chunk = list(itertools.islice(it, size))
        if not chunk:
            return
        yield chunk


def _dataset_loss(model, samples, batch_size, weights, rng_seed):
    """Mean loss over a fixed set with a fixed mid-path noise draw."""
    total = 0.0
    comps = np.zeros(5)
    rng = np.random.default_rng(rng_seed)
    for batch in _batches(samples, batch_size):
        c, t = training_forward(model, batch, rng, weights)
        total += t.item() * len(batch)
        comps += np.array([x.item() for x in c]) * len(batch)
    return total / len(samples), (comps / len(samples)).tolist()


def train(
    config: TrainConfig,
    model: DpnModel,
    on_epoch=None,
) -> Tuple[DpnModel, TrainHistory]:
    """Train until the validation loss stalls; returns the best checkpoint.

    An epoch that does not beat the best validation loss costs one unit of
    patience; when patience runs out training stops and the model is
    rolled back to the best epoch's weights.  A non-finite loss aborts
    training the same way (best weights restored) before re-raising.
    on_epoch(epoch, train_loss, val_loss), when given, runs after every
    epoch; it is for progress logging and must not touch the model.
    """
    opt = Adam(model.parameters(), lr=config.learning_rate)
    val = validation_set(config)
    history = TrainHistory()
    best = math.inf
    best_state = model.state_dict()
    stale = 0

    try:
        for epoch in range(1, config.epochs_max + 1):
            stream = stream_epoch(
                config.dataset_spec, config.samples_per_epoch, config.seed + epoch
            )
            inject_rng = np.random.default_rng(
                [config.seed + _INJECT_SEED_OFFSET, epoch]
            )
            running = 0.0
            seen = 0
            for batch in _batches(stream, config.batch_size):
                model.zero_grad()
                _, total = training_forward(
                    model, batch, inject_rng, config.loss_weights
                )
                total.backward()
                opt.step()
                running += total.item() * len(batch)
                seen += len(batch)
            history.train_loss.append(running / seen)

            val_loss, val_comps = _dataset_loss(
                model, val, config.batch_size, config.loss_weights,
                config.seed + _INJECT_SEED_OFFSET,
            )
            history.val_loss.append(val_loss)
            history.val_components.append(val_comps)
            if on_epoch is not None:
                on_epoch(epoch, history.train_loss[-1], val_loss)

            if val_loss < best:
                best = val_loss
                best_state = model.state_dict()
                history.best_epoch = epoch
                stale = 0
            else:
                stale += 1
            history.stopped_epoch = epoch
            if stale >= config.early_stop_patience:
                break
    except TrainingFault:
        model.load_state_dict(best_state)
        raise

    model.load_state_dict(best_state)
    return model, history


# ------------------------------------------------------------- reporting

@dataclasses.dataclass
class SnrBinRow:
    snr_lo: float
    snr_hi: float
    count: int
    scheme: Optional[str] = None
    accuracy: Optional[float] = None
    output_snr_db: Optional[float] = None
    cfo_ratio: Optional[float] = None
    timing_error: Optional[float] = None
    ser_model: Optional[float] = None
    ser_baseline: Optional[float] = None


@dataclasses.dataclass
class EvalReport:
    rows: List[SnrBinRow]
    confusion: Optional[np.ndarray] = None
    confusion_labels: Optional[List[str]] = None
    flops: Optional[FlopReport] = None

    _COLUMNS = (
        "snr_lo", "snr_hi", "count", "scheme", "accuracy", "output_snr_db",
        "cfo_ratio", "timing_error", "ser_model", "ser_baseline",
    )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(self._COLUMNS)
        for row in self.rows:
            writer.writerow(
                ["" if getattr(row, c) is None else getattr(row, c)
                 for c in self._COLUMNS]
            )
        return buf.getvalue()

    def to_json(self) -> str:
        payload: Dict[str, object] = {
            "rows": [dataclasses.asdict(r) for r in self.rows],
        }
        if self.confusion is not None:
            payload["confusion"] = self.confusion.tolist()
            payload["confusion_labels"] = self.confusion_labels
        if self.flops is not None:
            payload["flops"] = dataclasses.asdict(self.flops)
        return json.dumps(payload)

    def accuracy_at(self, min_snr_db: float) -> float:
        """Sample-weighted accuracy over bins at or above a threshold."""
        hits = total = 0.0
        for r in self.rows:
            if r.accuracy is not None and r.snr_lo >= min_snr_db:
                hits += r.accuracy * r.count
                total += r.count
        if total == 0:
            raise ValueError(f"no bins at or above {min_snr_db} dB")
        return hits / total

    def metric_at(self, name: str, min_snr_db: float) -> float:
        vals = [
            (getattr(r, name), r.count)
            for r in self.rows
            if getattr(r, name) is not None and r.snr_lo >= min_snr_db
        ]
        if not vals:
            raise ValueError(f"no {name} bins at or above {min_snr_db} dB")
        return sum(v * c for v, c in vals) / sum(c for _, c in vals)


def _bin_lo(snr_db: float) -> float:
    # noiseless records go into a single unbounded bin
    if math.isinf(snr_db):
        return math.inf
    return math.floor(snr_db / SNR_BIN_WIDTH_DB) * SNR_BIN_WIDTH_DB


def _group_by_bin(samples: Sequence[LabeledSample]):
    groups: Dict[float, List[LabeledSample]] = {}
    for s in samples:
        groups.setdefault(_bin_lo(s.params.snr_db), []).append(s)
    lows = sorted(groups)
    finite = [lo for lo in lows if math.isfinite(lo)]
    if finite:
        grid = np.arange(finite[0], finite[-1] + SNR_BIN_WIDTH_DB / 2,
                         SNR_BIN_WIDTH_DB)
        for lo in grid:
            if float(lo) not in groups:
                warnings.warn(
                    f"no samples in SNR bin [{lo}, {lo + SNR_BIN_WIDTH_DB}) dB; "
                    "bin omitted"
                )
    return [(lo, groups[lo]) for lo in lows]


def estimated_symbol_period(timing: np.ndarray) -> Optional[float]:
    """Mean spacing of the timing wave's threshold crossings, in samples."""
    edges = transition_indices(np.asarray(timing)) + 1
    if len(edges) < 2:
        return None
    return float(np.mean(np.diff(edges)))


def eval_params(model: DpnModel, samples: Sequence[LabeledSample]) -> EvalReport:
    """Estimator quality binned by input SNR.

    Output SNR compares the noise-reduction output against the clean
    signal (infinite when the residual is exactly zero); the carrier
    metric is the ratio of mean residual offset to mean true offset; the
    timing metric is the relative symbol-period error, where a record
    without at least two timing edges counts as a full period off.
    """
    stats: Dict[int, Tuple[float, float, float]] = {}
    for s in samples:
        params, z1_hat, _, _ = infer(model, s.y)
        err = float(np.mean(np.abs(z1_hat - s.z1) ** 2))
        sig = float(np.mean(np.abs(s.z1) ** 2))
        ratio = math.inf if err == 0.0 else sig / err
        tau = estimated_symbol_period(params.timing)
        t_err = 1.0 if tau is None else abs(s.params.sps - tau) / s.params.sps
        stats[id(s)] = (params.f0_hat, ratio, t_err)

    rows = []
    for lo, group in _group_by_bin(samples):
        f0_true = np.array([s.params.f0 for s in group])
        f0_hat = np.array([stats[id(s)][0] for s in group])
        snr_ratios = np.array([stats[id(s)][1] for s in group])
        timing_errs = np.array([stats[id(s)][2] for s in group])
        mean_ratio = float(np.mean(snr_ratios))
        denominator = float(np.mean(f0_true))
        rows.append(
            SnrBinRow(
                snr_lo=lo,
                snr_hi=lo + SNR_BIN_WIDTH_DB,
                count=len(group),
                output_snr_db=(
                    math.inf if math.isinf(mean_ratio)
                    else 10.0 * math.log10(mean_ratio) if mean_ratio > 0
                    else -math.inf
                ),
                cfo_ratio=(
                    float(np.mean(f0_true - f0_hat)) / denominator
                    if denominator != 0 else 0.0
                ),
                timing_error=float(np.mean(timing_errs)),
            )
        )
    return EvalReport(rows=rows)


def eval_classification(
    model: DpnModel,
    samples: Sequence[LabeledSample],
    universe: Sequence,
) -> EvalReport:
    """Top-1 accuracy per SNR bin plus a confusion matrix over the whole set."""
    n_classes = len(universe)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    predictions: Dict[int, int] = {}
    for s in samples:
        params, _, _, _ = infer(model, s.y)
        pred = int(np.argmax(params.class_scores))
        true = int(np.argmax(s.z5))
        confusion[true, pred] += 1
        predictions[id(s)] = pred

    rows = []
    for lo, group in _group_by_bin(samples):
        hits = sum(
            1 for s in group if predictions[id(s)] == int(np.argmax(s.z5))
        )
        rows.append(
            SnrBinRow(
                snr_lo=lo, snr_hi=lo + SNR_BIN_WIDTH_DB, count=len(group),
                accuracy=hits / len(group),
            )
        )
    if int(confusion.sum()) != len(samples):
        raise AssertionError("confusion matrix lost samples")
    overall = sum(r.accuracy * r.count for r in rows) / len(samples)
    if abs(overall - np.trace(confusion) / confusion.sum()) > 1e-12:
        raise AssertionError("confusion trace disagrees with binned accuracy")
    return EvalReport(
        rows=rows,
        confusion=confusion,
        confusion_labels=[str(getattr(u, "name", u)) for u in universe],
    )


def _genie_params(model: DpnModel, s: LabeledSample) -> RxParams:
    """Estimated filters and carrier, ground-truth timing."""
    params, _, _, _ = infer(model, s.y)
    return dataclasses.replace(params, timing=s.z4)


def eval_ser(
    model: Optional[DpnModel],
    samples: Sequence[LabeledSample],
    include_baseline: bool = True,
    normalize_gain: bool = True,
) -> EvalReport:
    """Symbol error rates per scheme and SNR bin.

    Genie conventions: the true scheme selects the slicer, the true timing
    wave selects the decision instants, and the residual phase is aligned
    to the reference before slicing.  Only the filter taps and the carrier
    estimate come from the model.
    """
    linear = [s for s in samples if s.params.scheme.kind == "linear"]
    flops_total = signal_path_flops(0)
    results: Dict[int, Dict[str, tuple]] = {}
    for s in linear:
        ref = visible_reference(s)
        row: Dict[str, tuple] = {}
        if model is not None:
            rep = run_signal_path(
                s.y, _genie_params(model, s), s.params.scheme,
                reference=ref, normalize_gain=normalize_gain,
            )
            row["model"] = (rep.ser, rep.compared_symbols)
            flops_total = flops_total + FlopReport(
                rep.flops.complex_ops, rep.flops.real_flops, count_nn_flops(model)
            )
        if include_baseline:
            rep = baseline_genie_dsp(s)
            row["baseline"] = (rep.ser, rep.compared_symbols)
        results[id(s)] = row

    rows = []
    for lo, group in _group_by_bin(linear):
        by_scheme: Dict[str, List] = {}
        for s in group:
            by_scheme.setdefault(s.params.scheme.name, []).append(results[id(s)])
        for scheme_name in sorted(by_scheme):
            entries = by_scheme[scheme_name]

            def pooled(key):
                pairs = [e[key] for e in entries if key in e and e[key][0] is not None]
                n = sum(c for _, c in pairs)
                if n == 0:
                    return None
                return sum(p * c for p, c in pairs) / n

            rows.append(
                SnrBinRow(
                    snr_lo=lo, snr_hi=lo + SNR_BIN_WIDTH_DB,
                    count=len(entries), scheme=scheme_name,
                    ser_model=pooled("model"),
                    ser_baseline=pooled("baseline"),
                )
            )
    return EvalReport(rows=rows, flops=flops_total)


def eval_ser_chunked(
    model: DpnModel,
    samples: Sequence[LabeledSample],
    chunk_len: int = 128,
    reuse_params: bool = True,
) -> EvalReport:
    """Symbol error rates when records are demodulated chunk by chunk.

    With reuse_params the estimators run once on the first chunk and the
    signal path replays their output over the rest, which is the cheap
    long-stream mode; the flop report reflects that split.  Genie timing
    and per-chunk phase alignment as in eval_ser.
    """
    nn_cost = count_nn_flops(model, length=chunk_len)

    linear = [s for s in samples if s.params.scheme.kind == "linear"
              and len(s.y) % chunk_len == 0]
    results: Dict[int, tuple] = {}
    flops_total = signal_path_flops(0)
    for s in linear:
        def estimator(chunk):
            params, _, _, _ = infer(model, chunk)
            return params, nn_cost

        rep = demod_chunked(
            s.y, s.params.scheme, estimator, chunk_len=chunk_len,
            reuse_params=reuse_params, timing=s.z4,
            reference=visible_reference(s),
        )
        results[id(s)] = (rep.ser, rep.compared_symbols)
        flops_total = flops_total + rep.flops

    rows = []
    for lo, group in _group_by_bin(linear):
        by_scheme: Dict[str, List] = {}
        for s in group:
            by_scheme.setdefault(s.params.scheme.name, []).append(results[id(s)])
        for scheme_name in sorted(by_scheme):
            entries = [e for e in by_scheme[scheme_name] if e[0] is not None]
            n = sum(c for _, c in entries)
            rows.append(
                SnrBinRow(
                    snr_lo=lo, snr_hi=lo + SNR_BIN_WIDTH_DB,
                    count=len(by_scheme[scheme_name]), scheme=scheme_name,
                    ser_model=(
                        sum(p * c for p, c in entries) / n if n else None
                    ),
                )
            )
    return EvalReport(rows=rows, flops=flops_total)


@dataclasses.dataclass
class ChunkRunReport:
    """Parameter reuse vs per-chunk re-estimation on equal-length streams."""

    stream_length: int
    n_streams: int
    symbols: int
    ser_reuse: float
    ser_reestimate: float
    flops_reuse: FlopReport
    flops_reestimate: FlopReport

    @property
    def ser_difference_se(self) -> float:
        """Standard error of (reuse - reestimate) under independent binomials."""
        n = self.symbols
        a, b = self.ser_reuse, self.ser_reestimate
        return math.sqrt(a * (1 - a) / n + b * (1 - b) / n)

    @property
    def tail_flop_reduction(self) -> float:
        """Flop ratio for chunks after the first: re-estimate over reuse."""
        n_chunks = self.flops_reuse.complex_ops // 16512
        per_sig = self.flops_reuse.real_flops // n_chunks
        nn_per_chunk = self.flops_reestimate.nn_flops // n_chunks
        return (nn_per_chunk + per_sig) / per_sig

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ser_difference_se"] = self.ser_difference_se
        d["tail_flop_reduction"] = self.tail_flop_reduction
        return d


def chunk_experiment(
    model: DpnModel,
    spec: DatasetSpec,
    stream_length: int,
    n_streams: int,
    seed: int = 0,
    chunk_len: int = 128,
) -> ChunkRunReport:
    """Long-stream demodulation with one parameter estimate vs one per chunk.

    Streams are drawn from the given dataset (genie timing over the full
    length); both modes see identical signals, so the SER difference
    isolates the cost of stale parameters.
    """
    long_spec = dataclasses.replace(spec, n_r=stream_length)
    nn_cost = count_nn_flops(model)

    def estimator(chunk):
        params, _, _, _ = infer(model, chunk)
        return params, nn_cost

    totals = {True: [0, 0, signal_path_flops(0)], False: [0, 0, signal_path_flops(0)]}
    for s in stream_epoch(long_spec, n_streams, seed):
        ref = visible_reference(s)
        for reuse in (True, False):
            rep = demod_chunked(
                s.y, s.params.scheme, estimator, chunk_len=chunk_len,
                reuse_params=reuse, timing=s.z4, reference=ref,
            )
            n = rep.compared_symbols
            if n:
                totals[reuse][0] += round(rep.ser * n)
                totals[reuse][1] += n
            totals[reuse][2] = totals[reuse][2] + rep.flops

    assert totals[True][1] == totals[False][1]
    return ChunkRunReport(
        stream_length=stream_length,
        n_streams=n_streams,
        symbols=totals[True][1],
        ser_reuse=totals[True][0] / totals[True][1],
        ser_reestimate=totals[False][0] / totals[False][1],
        flops_reuse=totals[True][2],
        flops_reestimate=totals[False][2],
    )


def ablation_run(
    config: TrainConfig,
    model_builder,
    masks: Sequence[frozenset],
    labels: Sequence[str],
) -> List[dict]:
    """Train one model per stage subset on identical seeds and compare.

    model_builder(mask) -> fresh DpnModel.  Returns one record per config
    with the validation loss and accuracy table; callers persist or print
    the trend, nothing here asserts which config wins.
    """
    if len(masks) != len(labels):
        raise ValueError("one label per mask")
    shared_test = holdout_set(config)
    universe = config.dataset_spec.universe
    out = []
    for mask, label in zip(masks, labels):
        model = model_builder(mask)
        model, history = train(config, model)
        report = eval_classification(model, shared_test, universe)
        entry = {
            "label": label,
            "stages": sorted(mask),
            "best_epoch": history.best_epoch,
            "stopped_epoch": history.stopped_epoch,
            "best_val_loss": min(history.val_loss),
            "accuracy_overall": float(
                np.trace(report.confusion) / report.confusion.sum()
            ),
        }
        try:
            entry["accuracy_high_snr"] = report.accuracy_at(10.0)
        except ValueError:
            entry["accuracy_high_snr"] = None
        out.append(entry)
    return out
