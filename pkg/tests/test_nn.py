import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from yieldcast.errors import ShapeError, StateError
from yieldcast.nn import (
    NetworkArch, backward, forward, gaussian_noise, grad_check, init_params, is_weight,
    lstm_step, mse_and_grad, param_count, predict, sigmoid,
)


def reference_forward(net, dynamic, static):
    """Per-sample, per-gate loop implementation used as an oracle."""
    arch = net.arch
    out = []
    for d, s in zip(dynamic, static):
        seq = list(d)
        for k, h in enumerate(arch.lstm_sizes):
            p = net.lstm(k)
            gates = {g: p.gate(g) for g in "ifgo"}
            hs, c, hidden = [], np.zeros(h), np.zeros(h)
            for x in seq:
                pre = {g: W @ x + U @ hidden + b for g, (W, U, b) in gates.items()}
                i = 1 / (1 + np.exp(-pre["i"]))
                f = 1 / (1 + np.exp(-pre["f"]))
                o = 1 / (1 + np.exp(-pre["o"]))
                c = f * c + i * np.tanh(pre["g"])
                hidden = o * np.tanh(c)
                hs.append(hidden)
            seq = hs
        z = s
        for k in range(len(arch.static_sizes)):
            z = np.maximum(net.params[f"static{k}.W"] @ z + net.params[f"static{k}.b"], 0)
        z = np.concatenate([seq[-1], z])
        for k in range(len(arch.head_sizes)):
            z = net.params[f"head{k}.W"] @ z + net.params[f"head{k}.b"]
            if k < len(arch.head_sizes) - 1:
                z = np.maximum(z, 0)
        out.append(z[0])
    return np.array(out)


def inputs(arch, batch, rng):
    return rng.uniform(size=(batch, arch.n, 4)), rng.uniform(size=(batch, 65))


def test_default_arch_and_param_count():
    arch = NetworkArch(n=9)
    assert (arch.lstm_sizes, arch.static_sizes, arch.head_sizes) == ((64, 64), (64, 32), (32, 1))
    assert param_count(arch) == sum(int(np.prod(s)) for s in arch.param_shapes().values())
    expected = (4 * 64 * (4 + 64 + 1) + 4 * 64 * (64 + 64 + 1) + 64 * 66 + 32 * 65
                + 32 * (64 + 32 + 1) + 1 * 33)
    assert param_count(arch) == expected


def test_arch_validation():
    with pytest.raises(ShapeError):
        NetworkArch(n=0)
    with pytest.raises(ShapeError):
        NetworkArch(n=9, head_sizes=(8, 2))
    arch = NetworkArch(n=3, lstm_sizes=(4,), static_sizes=(), head_sizes=(1,))
    assert NetworkArch.from_dict(arch.to_dict()) == arch


def test_init_forget_bias_and_glorot():
    net = init_params(NetworkArch(n=4, lstm_sizes=(8,)), seed=1)
    b = net.params["lstm0.b"]
    assert np.all(b[8:16] == 1.0) and np.all(b[:8] == 0) and np.all(b[16:] == 0)
    limit = np.sqrt(6 / (4 + 8))
    assert np.abs(net.params["lstm0.W"]).max() <= limit
    assert np.array_equal(init_params(net.arch, 1).params["lstm0.U"], net.params["lstm0.U"])
    assert is_weight("head0.W") and is_weight("lstm1.U") and not is_weight("lstm1.b")


def test_forward_matches_reference(tiny_arch, rng):
    net = init_params(tiny_arch, seed=7)
    d, s = inputs(tiny_arch, 5, rng)
    pred, cache = forward(net, d, s)
    assert cache is None
    assert pred == pytest.approx(reference_forward(net, d, s), rel=1e-12, abs=1e-12)


def test_lstm_step_matches_layer(rng):
    net = init_params(NetworkArch(n=3, lstm_sizes=(5,), static_sizes=(), head_sizes=(1,)), 0)
    p = net.lstm(0)
    x = rng.normal(size=(2, 3, 4))
    h, c = np.zeros((2, 5)), np.zeros((2, 5))
    for t in range(3):
        h, c = lstm_step(x[:, t], h, c, p)
    net.params["head0.W"][:] = 0
    net.params["head0.W"][0, :5] = 1
    assert predict(net, x, np.zeros((2, 65))) == pytest.approx(h.sum(axis=1))
    with pytest.raises(ShapeError):
        lstm_step(np.zeros(3), np.zeros(5), np.zeros(5), p)


def test_eval_is_deterministic_and_noise_free(tiny_arch, rng):
    net = init_params(tiny_arch, 0)
    d, s = inputs(tiny_arch, 4, rng)
    a = predict(net, d, s)
    assert np.array_equal(a, predict(net, d, s))
    net.train()
    noisy, cache = forward(net, d, s, np.random.default_rng(0))
    assert not np.allclose(noisy, a)
    clean, _ = forward(net, d, s, noise=np.zeros_like(d))
    assert clean == pytest.approx(a)
    assert cache["noise"].std() == pytest.approx(tiny_arch.noise_sigma, rel=0.3)


def test_train_mode_requires_rng_when_noisy(tiny_arch, rng):
    net = init_params(tiny_arch, 0).train()
    d, s = inputs(tiny_arch, 2, rng)
    with pytest.raises(StateError):
        forward(net, d, s)


def test_shape_errors(tiny_arch, rng):
    net = init_params(tiny_arch, 0)
    d, s = inputs(tiny_arch, 2, rng)
    with pytest.raises(ShapeError):
        forward(net, d[:, :8], s)
    with pytest.raises(ShapeError):
        forward(net, d, s[:, :64])
    with pytest.raises(ShapeError):
        forward(net, d, s[:1])


def test_backward_rejects_stale_or_missing_cache(tiny_arch, rng):
    net = init_params(tiny_arch, 0).train()
    d, s = inputs(tiny_arch, 3, rng)
    pred, cache = forward(net, d, s, noise=np.zeros_like(d))
    with pytest.raises(StateError):
        backward(net, None, np.ones(3))
    net.touch()
    with pytest.raises(StateError):
        backward(net, cache, np.ones(3))


def test_backward_returns_every_parameter(tiny_arch, rng):
    net = init_params(tiny_arch, 0).train()
    d, s = inputs(tiny_arch, 3, rng)
    pred, cache = forward(net, d, s, noise=np.zeros_like(d))
    grads = backward(net, cache, mse_and_grad(pred, np.zeros(3))[1])
    assert {k: g.shape for k, g in grads.items()} == {k: v.shape for k, v in net.params.items()}


def test_mse_and_grad():
    loss, grad = mse_and_grad(np.array([1.0, 3.0]), np.array([0.0, 0.0]))
    assert loss == 5.0 and grad.tolist() == [1.0, 3.0]


def test_grad_check_with_frozen_noise(tiny_arch, rng):
    net = init_params(tiny_arch, 3)
    d, s = inputs(tiny_arch, 4, rng)
    noise = rng.normal(0, 0.3, d.shape)
    assert grad_check(net, d, s, rng.uniform(size=4), noise=noise) < 1e-4


def test_grad_check_detects_a_wrong_gradient(tiny_arch, rng, monkeypatch):
    import yieldcast.nn as nn

    real = nn.backward

    def broken(net, cache, g):
        grads = real(net, cache, g)
        grads["lstm0.U"] = grads["lstm0.U"] * 1.01
        return grads

    monkeypatch.setattr(nn, "backward", broken)
    net = init_params(tiny_arch, 3)
    d, s = inputs(tiny_arch, 4, rng)
    assert grad_check(net, d, s, rng.uniform(size=4)) > 1e-3


@settings(max_examples=8, deadline=None)
@given(n=st.sampled_from([1, 2, 5]), h1=st.integers(1, 6), h2=st.integers(1, 6),
       seed=st.integers(0, 1000))
def test_grad_check_random_small_archs(n, h1, h2, seed):
    arch = NetworkArch(n=n, lstm_sizes=(h1, h2), static_sizes=(h2,), head_sizes=(h1, 1))
    r = np.random.default_rng(seed)
    d, s = inputs(arch, 3, r)
    assert grad_check(init_params(arch, seed), d, s, r.uniform(size=3)) < 1e-4


def test_sigmoid_extremes():
    x = np.array([-1000.0, 0.0, 1000.0])
    assert sigmoid(x.copy()).tolist() == [0.0, 0.5, 1.0]


def test_gaussian_noise():
    x = np.zeros((200, 50))
    assert np.array_equal(gaussian_noise(x, 0.0), x)
    y = gaussian_noise(x, 0.3, np.random.default_rng(0))
    assert y.std() == pytest.approx(0.3, rel=0.02)
    with pytest.raises(ValueError):
        gaussian_noise(x, 0.3)
