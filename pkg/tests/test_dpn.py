import dataclasses

import numpy as np
import pytest

from blindrx.dpn import (
    ABLATION_LADDER,
    DpnConfig,
    DpnModel,
    _conv_flops,
    _dense_flops,
    _lstm_flops,
    count_nn_flops,
    infer,
    training_forward,
)
from blindrx.exceptions import TrainingFault
from blindrx.losses import loss_phase_insensitive
from blindrx.sigcore import ModulationScheme as M
from blindrx.sigpath import signal_path_waveform
from blindrx.waveform import clean_params, dataset1, generate_sample, toy_dataset


def make_model(**over):
    cfg = dict(class_count=8)
    cfg.update(over)
    return DpnModel(DpnConfig(**cfg), np.random.default_rng(0))


def toy_samples(n, seed=0, spec=None):
    spec = spec or dataset1()
    rng = np.random.default_rng(seed)
    return [generate_sample(spec, rng) for _ in range(n)]


# ------------------------------------------------------------------ shape

class TestConfig:
    def test_default_parameter_budget(self):
        model = make_model()
        assert model.param_count() == 142_732
        assert model.param_count() <= 200_000

    def test_ablation_ladder_grows_one_stage_at_a_time(self):
        assert ABLATION_LADDER[0] == frozenset()
        assert ABLATION_LADDER[-1] == {"noise", "cfo", "eqmf", "timing"}
        for a, b in zip(ABLATION_LADDER, ABLATION_LADDER[1:]):
            assert a < b and len(b - a) == 1

    def test_disabled_stages_have_no_parameters(self):
        full = make_model()
        bare = make_model(stage_mask=frozenset())
        names = {n for n, _ in bare.parameters()}
        assert all(n.startswith(("fe_class", "class_head")) for n in names)
        assert bare.param_count() < full.param_count()

    def test_validation(self):
        with pytest.raises(ValueError):
            DpnConfig(class_count=0)
        with pytest.raises(ValueError):
            DpnConfig(class_count=2, stage_mask=frozenset({"noise", "bogus"}))
        with pytest.raises(ValueError):
            DpnConfig(class_count=2, lstm1_units=16, lstm2_units=32)
        with pytest.raises(ValueError):
            DpnConfig(class_count=2, conv_kernel=4)
        with pytest.raises(ValueError):
            DpnConfig(class_count=2, classifier_input="z9")

    def test_dict_round_trip(self):
        cfg = DpnConfig(
            class_count=4,
            stage_mask=frozenset({"noise", "cfo"}),
            feature_channels=16,
            inject_snr_range_db=(5.0, 15.0),
        )
        assert DpnConfig.from_dict(cfg.to_dict()) == cfg


# ------------------------------------------------------------------ infer

class TestInfer:
    def test_untrained_outputs_finite_probabilities(self):
        model = make_model()
        rng = np.random.default_rng(1)
        y = rng.standard_normal(128) + 1j * rng.standard_normal(128)
        params, z1, z2, z3 = infer(model, y)
        for z in (z1, z2, z3):
            assert np.all(np.isfinite(z))
        assert np.all(params.class_scores >= 0)
        assert params.class_scores.sum() == pytest.approx(1.0, abs=1e-9)
        assert params.class_scores.shape == (8,)

    def test_no_signal_path_passes_input_through(self):
        model = make_model(stage_mask=frozenset())
        rng = np.random.default_rng(2)
        y = rng.standard_normal(128) + 1j * rng.standard_normal(128)
        params, z1, z2, z3 = infer(model, y)
        np.testing.assert_array_equal(z1, y)
        np.testing.assert_array_equal(z2, y)
        np.testing.assert_array_equal(z3, y)
        assert params.f0_hat == 0.0
        assert params.noise_taps[31] == 1.0 and np.sum(np.abs(params.noise_taps)) == 1.0

    def test_zero_initialized_heads_start_as_passthrough(self):
        model = make_model()
        rng = np.random.default_rng(3)
        y = rng.standard_normal(128) + 1j * rng.standard_normal(128)
        params, z1, z2, z3 = infer(model, y)
        np.testing.assert_array_equal(z1, y)
        assert params.f0_hat == 0.0
        np.testing.assert_array_equal(z3, z2)

    def test_longer_records_accepted(self):
        model = make_model()
        rng = np.random.default_rng(4)
        y = rng.standard_normal(256) + 1j * rng.standard_normal(256)
        params, _, _, z3 = infer(model, y)
        assert len(z3) == 256
        assert len(params.timing) == 256

    def test_rx_params_reproduce_in_graph_chain_bit_exactly(self):
        # the whole point of the parameter bundle: replaying it through the
        # plain demodulator must give the same floats the graph produced
        model = make_model()
        rng = np.random.default_rng(5)
        for name in ("noise_head", "eqmf_head"):
            head = getattr(model, name)
            head.w.data[:] = 0.02 * rng.standard_normal(head.w.shape)
            head.b.data[:] += 0.1 * rng.standard_normal(head.b.shape)
        model.freq_head.b.data[0] = 0.0017
        s = generate_sample(dataset1(), rng)
        params, z1, z2, z3 = infer(model, s.y)
        assert params.f0_hat != 0.0
        replay = signal_path_waveform(s.y, params)
        np.testing.assert_array_equal(replay, z3)


# --------------------------------------------------------------- training

class TestTrainingForward:
    def test_runs_and_reports_five_components(self):
        model = make_model(feature_channels=8, n_residual_blocks=1,
                           lstm1_units=8, lstm2_units=8)
        batch = toy_samples(3)
        comps, total = training_forward(model, batch, np.random.default_rng(0))
        assert len(comps) == 5
        for c in comps:
            assert np.isfinite(c.item())
        assert total.item() == pytest.approx(sum(c.item() for c in comps))

    def test_gradients_stop_at_stage_boundaries(self):
        model = make_model(feature_channels=8, n_residual_blocks=1,
                           lstm1_units=8, lstm2_units=8)
        batch = toy_samples(2, seed=1)

        def grads_for(loss_index, subnet):
            model.zero_grad()
            comps, _ = training_forward(model, batch, np.random.default_rng(0))
            comps[loss_index].backward()
            return [t.grad for _, t in subnet.parameters()]

        # equalizer loss cannot reach the noise estimator: two boundaries away
        for g in grads_for(2, model.fe_noise) + grads_for(2, model.noise_head):
            assert g is None or not np.any(g)
        # carrier loss cannot reach the noise estimator either
        for g in grads_for(1, model.fe_noise):
            assert g is None or not np.any(g)
        # but the reconstruction loss trains it
        gn = grads_for(0, model.noise_head)
        assert any(g is not None and np.any(g) for g in gn)
        # and the equalizer loss trains the equalizer
        ge = grads_for(2, model.eqmf_head)
        assert any(g is not None and np.any(g) for g in ge)
        # timing and classification losses stay inside their networks
        for g in grads_for(3, model.fe_eqmf) + grads_for(4, model.fe_eqmf):
            assert g is None or not np.any(g)

    def test_noise_injection_is_seeded(self):
        model = make_model(feature_channels=8, n_residual_blocks=1,
                           lstm1_units=8, lstm2_units=8)
        batch = toy_samples(2, seed=2)
        _, t1 = training_forward(model, batch, np.random.default_rng(7))
        _, t2 = training_forward(model, batch, np.random.default_rng(7))
        _, t3 = training_forward(model, batch, np.random.default_rng(8))
        assert t1.item() == t2.item()
        assert t1.item() != t3.item()

    def test_injection_disabled_needs_no_rng(self):
        model = make_model(feature_channels=8, n_residual_blocks=1,
                           lstm1_units=8, lstm2_units=8,
                           inject_noise_before_eqmf=False)
        comps, total = training_forward(model, toy_samples(1, seed=3))
        assert np.isfinite(total.item())

    def test_oracle_frequency_head_matches_mixer_target(self):
        # freeze the carrier estimator to the true offset: the mixed output
        # must equal its target up to one constant phase
        spec = dataset1()
        rng = np.random.default_rng(4)
        p = dataclasses.replace(
            clean_params(M.QPSK), f0=0.0021, phi0=1.3,
            n_symbols=clean_params(M.QPSK).n_symbols,
        )
        s = generate_sample(spec, rng, p)
        model = make_model(feature_channels=8, n_residual_blocks=1,
                           lstm1_units=8, lstm2_units=8,
                           inject_noise_before_eqmf=False)
        # bias such that the bounded head emits exactly the true offset
        model.freq_head.b.data[0] = np.arctanh(p.f0 / model.config.f0_max)
        _, z1, z2, z3 = infer(model, s.y)
        assert loss_phase_insensitive(z2, s.z2).item() < 1e-10

    def test_nan_weights_raise_training_fault(self):
        model = make_model(feature_channels=8, n_residual_blocks=1,
                           lstm1_units=8, lstm2_units=8)
        model.class_head.w.data[:] = np.nan
        with pytest.raises(TrainingFault):
            training_forward(model, toy_samples(1, seed=5), np.random.default_rng(0))

    def test_batch_is_mean_of_singles(self):
        model = make_model(feature_channels=8, n_residual_blocks=1,
                           lstm1_units=8, lstm2_units=8,
                           inject_noise_before_eqmf=False)
        s1, s2 = toy_samples(2, seed=6)
        _, ta = training_forward(model, s1)
        _, tb = training_forward(model, s2)
        _, tab = training_forward(model, [s1, s2])
        assert tab.item() == pytest.approx((ta.item() + tb.item()) / 2, rel=1e-10)

    def test_aux_frequency_loss_shifts_total(self):
        base = make_model(feature_channels=8, n_residual_blocks=1,
                          lstm1_units=8, lstm2_units=8,
                          inject_noise_before_eqmf=False)
        aux = make_model(feature_channels=8, n_residual_blocks=1,
                         lstm1_units=8, lstm2_units=8,
                         inject_noise_before_eqmf=False, aux_f0_weight=1000.0)
        aux.load_state_dict(base.state_dict())
        sample = toy_samples(1, seed=7)[0]
        _, t0 = training_forward(base, sample)
        _, t1 = training_forward(aux, sample)
        want = t0.item() + 1000.0 * sample.params.f0 ** 2  # f0_hat starts at 0
        assert t1.item() == pytest.approx(want, rel=1e-9)


# ------------------------------------------------------------------ flops

class TestFlopCount:
    def test_dense_layer_closed_form(self):
        assert _dense_flops(32, 1) == 2 * 32 * 1 + 1
        assert _dense_flops(100, 10) == 2 * 100 * 10 + 10

    def test_conv_layer_closed_form(self):
        assert _conv_flops(2, 4, 5, 128) == 2 * (2 * 4 * 5 * 128) + 4 * 128

    def test_full_model_matches_layer_by_layer_sum(self):
        cfg = DpnConfig(class_count=3, feature_channels=8,
                        n_residual_blocks=2, lstm1_units=8, lstm2_units=8)
        model = DpnModel(cfg, np.random.default_rng(0))
        L = 128
        fe = _conv_flops(2, 8, 5, L) + 2 * (2 * _conv_flops(8, 8, 5, L))
        want = (
            fe + _conv_flops(8, 128, 1, L)       # noise estimator
            + fe + _dense_flops(8, 1)            # carrier estimator
            + fe + _conv_flops(8, 130, 1, L)     # equalizer estimator
            + _lstm_flops(2, 8, L) + _lstm_flops(1, 8, L) + L * _dense_flops(8, 1)
            + fe + _dense_flops(8, 3)            # classifier
        )
        got = count_nn_flops(model)
        assert got == want
        assert abs(got - want) <= 0.01 * want

    def test_disabled_stages_cost_nothing(self):
        full = make_model()
        c_full = count_nn_flops(full)
        bare = make_model(stage_mask=frozenset())
        c_bare = count_nn_flops(bare)
        assert c_bare < c_full
        ladder = [count_nn_flops(make_model(stage_mask=m)) for m in ABLATION_LADDER]
        assert ladder == sorted(ladder)
