"""Acceptance gate: one test per top-level release criterion.

Each test prints a single PASS line with the measured numbers when it
succeeds (visible with -s or -rA); the pytest -v status line is the
pass/fail record. Training-tier tests share one reduced model trained at
module scope; the ablation ladder is in the slow tier.
"""

import dataclasses
import math

import numpy as np
import pytest

from blindrx.dpn import (
    ABLATION_LABELS,
    ABLATION_LADDER,
    DpnConfig,
    DpnModel,
    count_nn_flops,
    training_forward,
)
from blindrx.harness import (
    TrainConfig,
    ablation_run,
    chunk_experiment,
    eval_classification,
    eval_params,
    eval_ser,
    holdout_set,
    train,
)
from blindrx.losses import (
    LossWeights,
    loss_classification,
    loss_phase_insensitive,
    loss_timing,
)
from blindrx.sigcore import LINEAR, ModulationScheme, constellation, timing_signal
from blindrx.sigpath import (
    apply_fir,
    correct_cfo,
    oracle_rx_params,
    run_signal_path,
    signal_path_flops,
    visible_reference,
)
from blindrx.waveform import (
    DatasetSpec,
    RrcFilter,
    add_awgn,
    clean_params,
    generate_sample,
    modulate_linear,
    stream_epoch,
    toy_dataset,
)

import test_engine


def _ok(line: str):
    print(f"PASS  {line}")


LINEAR_SCHEMES = tuple(m for m in ModulationScheme if m.kind == LINEAR)


# ------------------------------------------------- 1: flop accounting


def test_01_signal_path_flop_identity():
    fr = signal_path_flops(128)
    assert fr.complex_ops == 16512
    assert fr.real_flops == 99072
    _ok(f"signal path at 128 samples: {fr.complex_ops} complex ops, "
        f"{fr.real_flops} real flops (exact)")


# ------------------------------------------------- 2: loss correctness


def test_02_loss_correctness_suite():
    rng = np.random.default_rng(20)

    worst = 0.0
    for _ in range(100):
        z = rng.standard_normal(128) + 1j * rng.standard_normal(128)
        phi = rng.uniform(0.0, 2.0 * np.pi)
        worst = max(worst, abs(loss_phase_insensitive(
            z[None], (z * np.exp(1j * phi))[None]).item()))
    assert worst < 1e-12

    p = rng.standard_normal(32) + 1j * rng.standard_normal(32)
    t = rng.standard_normal(32) + 1j * rng.standard_normal(32)
    got = loss_phase_insensitive(p[None], t[None]).item()
    phis = np.linspace(0.0, 2.0 * np.pi, 10_000, endpoint=False)
    grid = np.min(np.sum(
        np.abs(p[None, :] - t[None, :] * np.exp(1j * phis)[:, None]) ** 2,
        axis=1)) / 32
    assert got == pytest.approx(grid, abs=1e-6)

    z4 = timing_signal(128, 7.5, 0.25)[None]
    z4_hat = rng.uniform(0.05, 0.95, (1, 128))
    assert loss_timing(z4, z4_hat).item() == loss_timing(1.0 - z4, z4_hat).item()

    for k in (2, 18):
        onehot = np.zeros((1, k))
        onehot[0, 1] = 1.0
        got = loss_classification(onehot, np.full((1, k), 1.0 / k)).item()
        assert got == pytest.approx(math.log(k), abs=1e-9)

    _ok(f"losses: rotation invariance worst {worst:.2e} (<1e-12), grid match "
        f"1e-6, polarity flip bit-exact, ln2/ln18 within 1e-9")


# ------------------------------------------------- 3: differentiation


def test_03_finite_difference_gradients():
    # elementwise ops, 100 random trials each at rel 1e-4
    for name, fn in test_engine.ELEMENTWISE:
        test_engine.test_elementwise_gradients(name, fn)

    # structured ops at the same tolerance, 100 trials each
    rng = np.random.default_rng(30)
    for trial in range(100):
        a = rng.normal(size=(4, 3))
        b = rng.normal(size=(3, 5))
        test_engine.check_grads(
            lambda ts: (ts[0] @ ts[1]).sum(), [a, b], n_checks=3, seed=trial)
    for trial in range(100):
        x = rng.normal(size=(2, 3, 16))
        w = rng.normal(size=(4, 3, 5))
        bias = rng.normal(size=4)
        m = rng.normal(size=(2, 4, 16))
        test_engine.check_grads(
            lambda ts: (test_engine.conv1d(ts[0], ts[1], ts[2]) * ts[3]).sum(),
            [x, w, bias, m], n_checks=3, seed=trial)
    for trial in range(100):
        x = rng.normal(size=(2, 2, 12))
        taps = rng.normal(size=(2, 2, 5))
        m = rng.normal(size=(2, 2, 12))
        test_engine.check_grads(
            lambda ts: (test_engine.complex_fir(ts[0], ts[1], 2) * ts[2]).sum(),
            [x, taps, m], n_checks=3, seed=trial)
    for trial in range(100):
        x = rng.normal(size=(2, 2, 10))
        f0 = rng.normal(size=(2, 1)) * 0.02
        m = rng.normal(size=(2, 2, 10))
        test_engine.check_grads(
            lambda ts: (test_engine.cfo_mix(ts[0], ts[1]) * ts[2]).sum(),
            [x, f0, m], n_checks=3, seed=trial)

    # 8-step LSTM at rel 1e-3, 100 trials
    for trial in range(100):
        x = rng.normal(size=(2, 8, 2))
        w = rng.normal(size=(2 + 3, 4 * 3)) * 0.5
        bias = rng.normal(size=4 * 3) * 0.1
        h0 = rng.normal(size=(2, 3)) * 0.1
        c0 = rng.normal(size=(2, 3)) * 0.1
        m = rng.normal(size=(2, 8, 3))

        def build(ts):
            ys, h_t, c_t = test_engine.lstm_scan(ts[0], ts[1], ts[2], ts[3], ts[4])
            return (ys * ts[5]).sum() + h_t.sum() + (c_t * 0.5).sum()

        test_engine.check_grads(build, [x, w, bias, h0, c0, m],
                                n_checks=3, rtol=1e-3, atol=1e-6, seed=trial)

    _ok("finite differences: elementwise/matmul/conv1d/complex-fir/cfo-mix "
        "rel<1e-4, 8-step lstm rel<1e-3, 100 trials each")


# ------------------------------------------------- 4: stop-gradient


def test_04_stop_gradient_isolation():
    spec = toy_dataset()
    model = DpnModel(
        DpnConfig(class_count=2, feature_channels=8, n_residual_blocks=1,
                  lstm1_units=8, lstm2_units=8, inject_noise_before_eqmf=False),
        np.random.default_rng(40))
    # non-trivial heads so z3's value genuinely depends on upstream stages
    head_rng = np.random.default_rng(41)
    for name in ("noise_head", "eqmf_head"):
        head = getattr(model, name)
        head.w.data[:] = 0.02 * head_rng.standard_normal(head.w.shape)
    samples = list(stream_epoch(spec, 4, seed=42))

    noise_params = [t for _, t in model.fe_noise.parameters()]
    noise_params += [t for _, t in model.noise_head.parameters()]

    only_l3 = LossWeights(0.0, 0.0, 1.0, 0.0, 0.0)
    model.zero_grad()
    _, total = training_forward(model, samples, weights=only_l3)
    total.backward()
    assert all(t.grad is None or not np.any(t.grad) for t in noise_params)

    only_l1 = LossWeights(1.0, 0.0, 0.0, 0.0, 0.0)
    model.zero_grad()
    _, total = training_forward(model, samples, weights=only_l1)
    total.backward()
    assert any(t.grad is not None and np.any(t.grad) for t in noise_params)

    _ok("stage-3 loss reaches no noise-estimator weight (exact zeros); "
        "stage-1 loss reaches them (nonzero)")


# ------------------------------------------------- 5: generator fidelity


def _q(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def test_05a_loopback_ser_zero():
    rng = np.random.default_rng(50)
    spec = DatasetSpec(universe=LINEAR_SCHEMES, f0_range=(0.0, 0.0),
                       snr_range_db=(math.inf, math.inf), sps_range=(8.0, 8.0),
                       t0_range=(0.0, 0.0), phi0_range=(0.0, 0.0),
                       delay_spread_range=(0.0, 0.0), nlos_mean_mags=(0.0, 0.0),
                       n_r=512)
    total = 0
    for scheme in LINEAR_SCHEMES:
        p = clean_params(scheme, n_r=512)
        s = generate_sample(spec, rng, dataclasses.replace(p, phi0=0.0))
        rep = run_signal_path(s.y, oracle_rx_params(s), scheme,
                              reference=visible_reference(s))
        assert rep.ser == 0.0, f"{scheme.name}: ser {rep.ser}"
        total += rep.compared_symbols
    _ok(f"loopback: {len(LINEAR_SCHEMES)} linear schemes, "
        f"{total} symbols, zero errors")


def test_05b_awgn_qpsk_ser_matches_theory():
    sps, rolloff = 8, 0.35
    filt = RrcFilter.design(sps, rolloff)
    pts = constellation(ModulationScheme.QPSK)
    g = filt.taps
    rng = np.random.default_rng(51)
    m_chunk, skip, chunks = 50_000, 8, 21
    lines = []
    for target_db in (6.0, 8.0, 10.0):
        snr_db = target_db - 10.0 * math.log10(sps)
        err = tot = 0
        for _ in range(chunks):
            idx = rng.integers(0, len(pts), m_chunk)
            x = modulate_linear(pts[idx], filt, sps, 0.0)
            y = add_awgn(x, snr_db, rng)
            mf = np.convolve(y, g[::-1].conj(), mode="same")
            dec = np.argmin(
                np.abs(mf[np.arange(m_chunk) * sps][:, None] - pts[None, :]),
                axis=1)
            keep = slice(skip, m_chunk - skip)
            err += int(np.sum(dec[keep] != idx[keep]))
            tot += m_chunk - 2 * skip
        p = _q(math.sqrt(10.0 ** (target_db / 10.0)))
        theory = 2.0 * p - p * p
        ser = err / tot
        assert tot >= 1_000_000
        assert abs(ser - theory) <= 0.15 * theory, (
            f"Es/N0 {target_db} dB: ser {ser:.3e} vs theory {theory:.3e}")
        lines.append(f"{target_db:g}dB {ser:.2e}/{theory:.2e}")
    _ok("awgn qpsk ser vs closed form within 15%: " + ", ".join(lines))


def test_05c_snr_labels_calibrated():
    spec = dataclasses.replace(toy_dataset(), snr_range_db=(0.0, 20.0))
    diffs = np.empty(100_000)
    for i, s in enumerate(stream_epoch(spec, len(diffs), seed=52)):
        noise = s.y - s.z1
        measured = 10.0 * math.log10(
            float(np.mean(np.abs(s.z1) ** 2) / np.mean(np.abs(noise) ** 2)))
        diffs[i] = measured - s.params.snr_db
    bias = float(np.mean(diffs))
    assert abs(bias) < 0.5
    _ok(f"snr labels over {len(diffs)} samples: mean offset {bias:+.4f} dB, "
        f"spread {np.std(diffs):.3f} dB (|mean| < 0.5)")


# ------------------------------------------------- 6: oracle pipeline


def test_06_oracle_parameter_pipeline():
    # integer sps with grid-aligned t0 keeps decision instants on the
    # zero-ISI points, the only regime where exact-zero SER is provable
    spec = DatasetSpec(
        universe=(ModulationScheme.BPSK, ModulationScheme.QPSK,
                  ModulationScheme.PSK8, ModulationScheme.QAM16),
        f0_range=(0.0005, 0.005), snr_range_db=(math.inf, math.inf),
        sps_range=(8.0, 8.0), t0_range=(0.25, 0.25),
        delay_spread_range=(0.0, 0.0), nlos_mean_mags=(0.0, 0.0))
    worst_l2 = 0.0
    errors = symbols = 0
    for s in stream_epoch(spec, 40, seed=60):
        params = oracle_rx_params(s)
        z2_hat = correct_cfo(apply_fir(s.y, params.noise_taps), params.f0_hat)
        worst_l2 = max(worst_l2,
                       loss_phase_insensitive(z2_hat[None], s.z2[None]).item())
        rep = run_signal_path(s.y, params, s.params.scheme,
                              reference=visible_reference(s))
        errors += round(rep.ser * rep.compared_symbols)
        symbols += rep.compared_symbols
    assert worst_l2 < 1e-10
    assert errors == 0
    _ok(f"oracle params on 40 impaired records: worst stage-2 loss "
        f"{worst_l2:.2e} (<1e-10), {errors}/{symbols} symbol errors")


# ------------------------------------------------- 7/8: trained tiers


TOY_TRAIN = TrainConfig(
    dataset_spec=toy_dataset(),
    epochs_max=30,
    samples_per_epoch=10_000,
    batch_size=32,
    early_stop_patience=8,
    validation_size=1_000,
    test_size=2_000,
    seed=0,
)

TOY_MODEL = DpnConfig(class_count=2, feature_channels=16, n_residual_blocks=2,
                      lstm1_units=32, lstm2_units=32)


@pytest.fixture(scope="module")
def desk_model():
    model = DpnModel(TOY_MODEL, np.random.default_rng(0))
    model, history = train(TOY_TRAIN, model)
    return model, history


def test_07_desk_scale_training_targets(desk_model):
    model, history = desk_model
    test = holdout_set(TOY_TRAIN)
    rc = eval_classification(model, test, TOY_TRAIN.dataset_spec.universe)
    rp = eval_params(model, test)
    acc = rc.accuracy_at(10.0)
    cfo = rp.metric_at("cfo_ratio", 10.0)
    terr = rp.metric_at("timing_error", 10.0)
    assert acc > 0.95, f"accuracy at snr>=10: {acc:.4f}"
    assert abs(cfo) < 0.25, f"residual-cfo ratio at snr>=10: {cfo:.4f}"
    assert terr < 0.05, f"timing error at snr>=10: {terr:.4f}"
    _ok(f"desk-scale training ({history.stopped_epoch} epochs, best "
        f"{history.best_epoch}): acc {acc:.3f} (>0.95), cfo ratio {cfo:+.3f} "
        f"(|.|<0.25), timing err {terr:.3f} (<0.05) at snr>=10dB")


def test_08_chunk_reuse_equivalence(desk_model):
    model, _ = desk_model
    spec = dataclasses.replace(toy_dataset(),
                               universe=(ModulationScheme.QPSK,))
    nn = count_nn_flops(model, 128)
    sig = signal_path_flops(128).real_flops
    lines = []
    for length in (512, 1024):
        rep = chunk_experiment(model, spec, stream_length=length,
                               n_streams=1000, seed=80 + length)
        diff = rep.ser_reuse - rep.ser_reestimate
        se = rep.ser_difference_se()
        assert abs(diff) <= 2.0 * se, (
            f"len {length}: ser diff {diff:.3e} vs 2se {2 * se:.3e}")
        want = (nn + sig) / sig
        assert rep.tail_flop_reduction() == pytest.approx(want, rel=1e-12)
        lines.append(f"len {length}: dser {diff:+.2e} (2se {2 * se:.2e}), "
                     f"tail reduction {rep.tail_flop_reduction():.1f}x")
    _ok("chunk reuse: " + "; ".join(lines))


# ------------------------------------------------- 9: ablation ladder


@pytest.mark.slow
def test_09_ablation_ladder_completes():
    config = dataclasses.replace(TOY_TRAIN, epochs_max=10,
                                 samples_per_epoch=5_000, test_size=1_000)

    def build(mask):
        return DpnModel(dataclasses.replace(TOY_MODEL, stage_mask=mask),
                        np.random.default_rng(0))

    results = ablation_run(config, build, ABLATION_LADDER, ABLATION_LABELS)
    assert [r["label"] for r in results] == list(ABLATION_LABELS)
    for r in results:
        assert 0.0 <= r["accuracy_overall"] <= 1.0
        assert r["stopped_epoch"] >= 1
        assert math.isfinite(r["best_val_loss"])
    # the accuracy trend across the ladder is recorded, not asserted
    trend = ", ".join(
        f"{r['label']}={r['accuracy_overall']:.3f}" for r in results)
    _ok(f"ablation ladder trained to completion; overall accuracy: {trend}")
