import math

import numpy as np
import pytest

from blindrx.exceptions import DimensionError, TrainingFault
from blindrx.nn import (
    LSTM,
    Adam,
    Conv1d,
    Dense,
    Module,
    ResidualBlock,
    Tensor,
    cfo_mix,
    complex_fir,
    concat,
    conv1d,
    global_avg_pool,
    load_checkpoint,
    lstm_scan,
    magnitude,
    minimum2,
    save_checkpoint,
    stop_gradient,
)


def numeric_grad(fn, arrays, idx, i, eps=1e-6):
    flat = arrays[idx].ravel()
    old = flat[i]
    flat[i] = old + eps
    up = fn()
    flat[i] = old - eps
    dn = fn()
    flat[i] = old
    return (up - dn) / (2 * eps)


def check_grads(build, arrays, n_checks=12, rtol=1e-4, atol=1e-7, seed=0):
    """build(tensors) -> scalar Tensor; arrays are the leaf buffers."""
    rng = np.random.default_rng(seed)
    tensors = [Tensor(a) for a in arrays]
    loss = build(tensors)
    loss.backward()
    got = [t.grad for t in tensors]

    def scalar():
        ts = [Tensor(a) for a in arrays]
        return build(ts).item()

    for idx in range(len(arrays)):
        size = arrays[idx].size
        for i in rng.choice(size, size=min(n_checks, size), replace=False):
            want = numeric_grad(scalar, arrays, idx, i)
            assert got[idx] is not None
            g = got[idx].ravel()[i]
            assert abs(g - want) <= atol + rtol * abs(want), (
                f"leaf {idx} elem {i}: analytic {g} vs numeric {want}")


ELEMENTWISE = [
    ("add", lambda a, b: a + b),
    ("mul", lambda a, b: a * b),
    ("sub", lambda a, b: a - b),
    ("div", lambda a, b: a / (b * b + 1.0)),
    ("pow", lambda a, b: (a * a + 1.0) ** 1.7 + b),
    ("exp", lambda a, b: (a * 0.3).exp() + b),
    ("log", lambda a, b: (a * a + 1.5).log() * b),
    ("sqrt", lambda a, b: (a * a + 1.0).sqrt() + b),
    ("tanh", lambda a, b: a.tanh() * b),
    ("sigmoid", lambda a, b: a.sigmoid() + b),
    ("relu", lambda a, b: (a + 0.05).relu() * b),  # offset keeps FD off the kink
    ("sin", lambda a, b: a.sin() * b.cos()),
    ("clip", lambda a, b: (a * 3.0).clip(-1.0, 1.0) * b),
    ("softmax", lambda a, b: (a.softmax() * b).sum()),
]


@pytest.mark.parametrize("name,fn", ELEMENTWISE, ids=[n for n, _ in ELEMENTWISE])
def test_elementwise_gradients(name, fn):
    rng = np.random.default_rng(hash(name) % 2**32)
    for trial in range(100):
        a = rng.normal(size=(3, 5))
        b = rng.normal(size=(3, 5))
        if name == "clip":
            # keep FD probes away from the clip boundaries
            a = a[np.all(np.abs(np.abs(a * 3.0) - 1.0) > 1e-3, axis=1)][:2]
            b = b[:len(a)]
            if len(a) == 0:
                continue
        check_grads(lambda ts: fn(ts[0], ts[1]).sum(), [a, b], n_checks=4, seed=trial)


def test_broadcasting_gradients():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(4, 1, 5))
    b = rng.normal(size=(3, 1))
    check_grads(lambda ts: (ts[0] * ts[1] + ts[1]).sum(), [a, b])


def test_matmul_gradients():
    rng = np.random.default_rng(2)
    for trial in range(100):
        a = rng.normal(size=(4, 3))
        b = rng.normal(size=(3, 5))
        c = rng.normal(size=(4, 5))
        check_grads(lambda ts: ((ts[0] @ ts[1]) * ts[2]).sum(), [a, b, c], n_checks=4, seed=trial)


def test_reductions_and_shape_gradients():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4, 6))
    check_grads(lambda ts: ts[0].mean(axis=1).sum(), [a])
    check_grads(lambda ts: ts[0].reshape(2, 12).sum(axis=0).mean(), [a])
    check_grads(lambda ts: (ts[0][1:3, ::2] * 2.0).sum(), [a])
    b = rng.normal(size=(2, 6))
    check_grads(lambda ts: concat([ts[0], ts[1]], axis=0).mean(), [a, b])


def test_minimum2_and_magnitude_gradients():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(3, 4)) + 2.0
    b = rng.normal(size=(3, 4))
    check_grads(lambda ts: minimum2(ts[0], ts[1]).sum(), [a, b])
    check_grads(lambda ts: magnitude(ts[0], ts[1]).sum(), [a, b])


def test_magnitude_subgradient_zero_at_origin():
    re = Tensor(np.zeros(3))
    im = Tensor(np.zeros(3))
    m = magnitude(re, im).sum()
    m.backward()
    np.testing.assert_array_equal(re.grad, 0.0)
    np.testing.assert_array_equal(im.grad, 0.0)


def test_conv1d_identity_and_bias():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(2, 3, 16)))
    w = np.zeros((3, 3, 1))
    for c in range(3):
        w[c, c, 0] = 1.0
    y = conv1d(x, Tensor(w), Tensor(np.zeros(3)))
    np.testing.assert_allclose(y.data, x.data, atol=1e-15)
    bias = rng.normal(size=4)
    y2 = conv1d(x, Tensor(np.zeros((4, 3, 5))), Tensor(bias))
    np.testing.assert_allclose(y2.data, np.broadcast_to(bias[None, :, None], (2, 4, 16)), atol=1e-15)


def test_conv1d_gradients():
    rng = np.random.default_rng(6)
    for trial in range(20):
        x = rng.normal(size=(2, 3, 16))
        w = rng.normal(size=(4, 3, 5))
        b = rng.normal(size=4)
        m = rng.normal(size=(2, 4, 16))
        check_grads(lambda ts: (conv1d(ts[0], ts[1], ts[2]) * ts[3]).sum(),
                    [x, w, b, m], n_checks=5, seed=trial)


def test_global_avg_pool():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 4, 8))
    out = global_avg_pool(Tensor(x))
    np.testing.assert_allclose(out.data, x.mean(axis=2), atol=1e-15)
    perm = x[:, :, rng.permutation(8)]
    np.testing.assert_allclose(global_avg_pool(Tensor(perm)).data, out.data, atol=1e-15)
    check_grads(lambda ts: (global_avg_pool(ts[0]) ** 2.0).sum(), [x])


def test_complex_fir_gradients():
    rng = np.random.default_rng(8)
    for trial in range(20):
        x = rng.normal(size=(2, 2, 12))
        t = rng.normal(size=(2, 2, 5))
        m = rng.normal(size=(2, 2, 12))
        check_grads(lambda ts: (complex_fir(ts[0], ts[1], 2) * ts[2]).sum(),
                    [x, t, m], n_checks=5, seed=trial)


def test_complex_fir_matches_complex_arithmetic():
    rng = np.random.default_rng(9)
    xr = rng.normal(size=(1, 2, 20))
    tr = rng.normal(size=(1, 2, 7))
    y = complex_fir(Tensor(xr), Tensor(tr), 3).data
    xc = xr[0, 0] + 1j * xr[0, 1]
    tc = tr[0, 0] + 1j * tr[0, 1]
    want = np.zeros(20, dtype=complex)
    for n in range(20):
        for j in range(7):
            m = n - j + 3
            if 0 <= m < 20:
                want[n] += tc[j] * xc[m]
    np.testing.assert_allclose(y[0, 0] + 1j * y[0, 1], want, atol=1e-12)


def test_cfo_mix_matches_complex_arithmetic():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(3, 2, 32))
    f0 = rng.normal(size=(3, 1)) * 0.01
    y = cfo_mix(Tensor(x), Tensor(f0)).data
    k = np.arange(32)
    for b in range(3):
        xc = x[b, 0] + 1j * x[b, 1]
        want = xc * np.exp(-1j * 2 * np.pi * f0[b, 0] * k)
        np.testing.assert_allclose(y[b, 0] + 1j * y[b, 1], want, atol=1e-12)


def test_cfo_mix_gradients():
    rng = np.random.default_rng(11)
    for trial in range(20):
        x = rng.normal(size=(2, 2, 10))
        f0 = rng.normal(size=(2, 1)) * 0.02
        m = rng.normal(size=(2, 2, 10))
        check_grads(lambda ts: (cfo_mix(ts[0], ts[1]) * ts[2]).sum(),
                    [x, f0, m], n_checks=6, seed=trial)


def test_lstm_zero_weights_zero_output():
    x = Tensor(np.random.default_rng(0).normal(size=(2, 5, 3)))
    w = Tensor(np.zeros((3 + 4, 16)))
    b = Tensor(np.zeros(16))
    h0 = Tensor(np.zeros((2, 4)))
    c0 = Tensor(np.zeros((2, 4)))
    ys, hT, cT = lstm_scan(x, w, b, h0, c0)
    np.testing.assert_array_equal(ys.data, 0.0)
    np.testing.assert_array_equal(hT.data, 0.0)
    np.testing.assert_array_equal(cT.data, 0.0)


def test_lstm_single_step_is_cell():
    rng = np.random.default_rng(12)
    Din, Dh = 3, 4
    x = rng.normal(size=(1, 1, Din))
    w = rng.normal(size=(Din + Dh, 4 * Dh))
    b = rng.normal(size=4 * Dh)
    h0 = rng.normal(size=(1, Dh))
    c0 = rng.normal(size=(1, Dh))
    ys, hT, cT = lstm_scan(Tensor(x), Tensor(w), Tensor(b), Tensor(h0), Tensor(c0))

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    z = np.concatenate([x[0, 0], h0[0]]) @ w + b
    i, f = sig(z[:Dh]), sig(z[Dh:2 * Dh])
    g, o = np.tanh(z[2 * Dh:3 * Dh]), sig(z[3 * Dh:])
    c = f * c0[0] + i * g
    h = o * np.tanh(c)
    np.testing.assert_allclose(hT.data[0], h, atol=1e-12)
    np.testing.assert_allclose(cT.data[0], c, atol=1e-12)
    np.testing.assert_allclose(ys.data[0, 0], h, atol=1e-12)


def test_lstm_gradients_8_steps():
    rng = np.random.default_rng(13)
    Din, Dh = 2, 3
    for trial in range(10):
        x = rng.normal(size=(2, 8, Din))
        w = rng.normal(size=(Din + Dh, 4 * Dh)) * 0.5
        b = rng.normal(size=4 * Dh) * 0.1
        h0 = rng.normal(size=(2, Dh)) * 0.1
        c0 = rng.normal(size=(2, Dh)) * 0.1
        m = rng.normal(size=(2, 8, Dh))

        def build(ts):
            ys, hT, cT = lstm_scan(ts[0], ts[1], ts[2], ts[3], ts[4])
            return (ys * ts[5]).sum() + hT.sum() + (cT * 0.5).sum()

        check_grads(build, [x, w, b, h0, c0, m], n_checks=5, rtol=1e-3, atol=1e-6, seed=trial)


def test_stop_gradient_blocks_upstream():
    rng = np.random.default_rng(14)
    a = Tensor(rng.normal(size=(3,)))
    b = Tensor(rng.normal(size=(3,)))
    y = a * 2.0
    loss = (b + stop_gradient(y)) .sum()
    loss.backward()
    assert a.grad is None
    np.testing.assert_array_equal(b.grad, np.ones(3))
    np.testing.assert_array_equal(stop_gradient(a).data, a.data)


def test_stop_gradient_composite_fd():
    rng = np.random.default_rng(15)
    x = rng.normal(size=(4,))
    y = rng.normal(size=(4,))

    def build(ts):
        return (ts[0] * 3.0 + stop_gradient(ts[1] * ts[1])).sum()

    tensors = [Tensor(x), Tensor(y)]
    loss = build(tensors)
    loss.backward()
    np.testing.assert_allclose(tensors[0].grad, 3.0)
    assert tensors[1].grad is None


def test_residual_block_zero_weights_is_identity():
    rng = np.random.default_rng(16)
    block = ResidualBlock(3, 5, rng)
    block.conv1.w.data[:] = 0.0
    block.conv2.w.data[:] = 0.0
    x = Tensor(rng.normal(size=(2, 3, 10)))
    np.testing.assert_allclose(block(x).data, x.data, atol=1e-15)


def test_residual_stack_preserves_shape():
    rng = np.random.default_rng(17)
    blocks = [ResidualBlock(4, 3, rng) for _ in range(6)]
    x = Tensor(rng.normal(size=(2, 4, 12)))
    for blk in blocks:
        x = blk(x)
    assert x.shape == (2, 4, 12)


def test_adam_zero_grad_no_change():
    rng = np.random.default_rng(18)
    p = Tensor(rng.normal(size=(4,)))
    before = p.data.copy()
    opt = Adam([("p", p)])
    p.grad = np.zeros(4)
    opt.step()
    np.testing.assert_array_equal(p.data, before)


def test_adam_clip_contract():
    p = Tensor(np.zeros(4))
    opt = Adam([("p", p)], clip_norm=1.0)
    p.grad = np.full(4, 5.0)  # norm 10
    assert abs(opt.global_grad_norm() - 10.0) < 1e-12
    opt.step()
    # effective per-element gradient after clipping: 0.5; first ADAM step is
    # -lr * sign(g) regardless of magnitude (bias-corrected m/sqrt(v) = 1)
    np.testing.assert_allclose(p.data, -0.001 * np.ones(4) / (1.0 + 1e-8 / 0.5), rtol=1e-9)


def test_adam_first_step_hand_unrolled():
    p = Tensor(np.array([0.0]))
    opt = Adam([("p", p)], clip_norm=10.0)
    p.grad = np.array([1.0])
    opt.step()
    # m_hat = 1, v_hat = 1 -> step = -lr / (1 + eps)
    want = -0.001 / (1.0 + 1e-8)
    np.testing.assert_allclose(p.data, [want], rtol=1e-12)


def test_adam_nan_faults():
    p = Tensor(np.zeros(2))
    opt = Adam([("p", p)])
    p.grad = np.array([np.nan, 0.0])
    with pytest.raises(TrainingFault):
        opt.step()


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(19)

    class Net(Module):
        def __init__(self):
            self.fc = Dense(3, 4, rng)
            self.conv = Conv1d(2, 3, 5, rng)

    net = Net()
    state = net.state_dict()
    path = str(tmp_path / "net.ckpt")
    save_checkpoint(path, state, meta={"note": "test"})
    loaded, meta = load_checkpoint(path)
    assert meta == {"note": "test"}
    assert set(loaded) == set(state)
    for k in state:
        np.testing.assert_array_equal(loaded[k], state[k])
    net2 = Net()
    net2.load_state_dict(loaded)
    for (_, a), (_, b) in zip(net.parameters(), net2.parameters()):
        np.testing.assert_array_equal(a.data, b.data)


def test_module_param_count():
    rng = np.random.default_rng(20)
    d = Dense(10, 7, rng)
    assert d.param_count() == 10 * 7 + 7
    lstm = LSTM(2, 8, rng)
    assert lstm.param_count() == (2 + 8) * 32 + 32


def test_dimension_errors():
    rng = np.random.default_rng(21)
    with pytest.raises(DimensionError):
        conv1d(Tensor(rng.normal(size=(1, 2, 8))), Tensor(rng.normal(size=(3, 2, 4))), Tensor(np.zeros(3)))
    with pytest.raises(DimensionError):
        complex_fir(Tensor(rng.normal(size=(1, 3, 8))), Tensor(rng.normal(size=(1, 2, 3))), 1)
    with pytest.raises(DimensionError):
        Tensor(np.zeros((2, 2))).backward()
