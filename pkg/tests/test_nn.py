import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cellfree_ho import nn


def numeric_grads(net, x, loss_fn, h=1e-5):
    out = []
    for p in net.params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            lp = loss_fn(nn.forward(net, x)[0])
            p[i] = old - h
            lm = loss_fn(nn.forward(net, x)[0])
            p[i] = old
            g[i] = (lp - lm) / (2 * h)
        out.append(g)
    return out


@pytest.mark.parametrize("out_tanh", [False, True])
def test_backward_matches_finite_differences(out_tanh, rng):
    net = nn.init_xavier((8, 16, 4), rng, out_tanh=out_tanh)
    for b in net.biases:
        b[:] = rng.normal(0, 0.1, b.shape)
    x = rng.standard_normal((5, 8))
    w = rng.standard_normal((5, 4))

    def loss(y):
        return float(np.sum(w * y) + 0.5 * np.sum(y ** 2))

    y, cache = nn.forward(net, x)
    g = nn.backward(net, cache, w + y)
    num = numeric_grads(net, x, loss)
    for a, b in zip(g.params, num):
        assert np.max(np.abs(a - b)) <= 1e-4 * max(np.max(np.abs(b)), 1e-8)


def test_input_gradient(rng):
    net = nn.init_xavier((6, 10, 10, 3), rng)
    x = rng.standard_normal(6)
    dy = rng.standard_normal(3)
    _, cache = nn.forward(net, x)
    dx = nn.backward(net, cache, dy).dx
    num = np.zeros(6)
    for i in range(6):
        e = np.zeros(6)
        e[i] = 1e-6
        num[i] = (dy @ net(x + e) - dy @ net(x - e)) / 2e-6
    np.testing.assert_allclose(dx, num, rtol=1e-5, atol=1e-9)
    assert nn.backward(net, cache, dy, param_grads=False).params == []


def test_xavier_bounds_and_variance(rng):
    net = nn.init_xavier((64, 64), rng)
    bound = math.sqrt(6 / 128)
    assert bound == pytest.approx(0.2165, abs=1e-4)
    assert np.all(np.abs(net.weights[0]) <= bound)
    assert np.all(net.biases[0] == 0)
    big = nn.init_xavier((108, 64), rng)
    assert np.var(big.weights[0]) == pytest.approx(2 / (108 + 64), rel=0.05)


def test_xavier_dtype_keeps_stream():
    a = nn.init_xavier((5, 7, 2), np.random.default_rng(1))
    b = nn.init_xavier((5, 7, 2), np.random.default_rng(1), dtype=np.float32)
    assert b.dtype == np.float32
    np.testing.assert_allclose(a.weights[1], b.weights[1], rtol=1e-6)


def test_forward_examples():
    net = nn.Mlp((1, 1), [np.array([[2.0]])], [np.array([1.0])])
    y, cache = nn.forward(net, np.array([3.0]))
    assert cache.pre[0][0] == 7.0 and y[0] == 7.0
    z = nn.Mlp((3, 2, 2), [np.zeros((3, 2)), np.zeros((2, 2))], [np.zeros(2), np.zeros(2)])
    np.testing.assert_array_equal(z(np.ones(3)), 0.0)
    z.out_tanh = True
    np.testing.assert_array_equal(z(np.ones(3)), 0.0)
    relu = nn.Mlp((1, 1, 1), [np.array([[1.0]]), np.array([[1.0]])], [np.zeros(1), np.zeros(1)])
    assert relu(np.array([-4.0]))[0] == 0.0
    with pytest.raises(ValueError):
        nn.forward(relu, np.ones(2))


def test_backward_trivia(rng):
    net = nn.init_xavier((4, 5, 3), rng)
    _, cache = nn.forward(net, rng.standard_normal(4))
    g = nn.backward(net, cache, np.zeros(3))
    assert all(np.all(p == 0) for p in g.params)
    lin = nn.Mlp((1, 1), [np.array([[1.0]])], [np.zeros(1)], out_tanh=True)
    _, cache = nn.forward(lin, np.zeros(1))
    assert nn.backward(lin, cache, np.array([0.7])).dx[0] == pytest.approx(0.7)


def test_act_matches_forward(rng):
    net = nn.init_xavier((108, 64, 64, 54), rng)
    x = rng.uniform(-1, 1, 108)
    np.testing.assert_allclose(net.act(x), net(x), rtol=1e-12, atol=1e-12)


def test_adam_first_step_sign():
    p = [np.array([1.0, -2.0, 0.5])]
    st_ = nn.AdamState.for_params(p)
    nn.adam_step(st_, p, [np.array([3.0, -0.2, 0.0])])
    np.testing.assert_allclose(p[0], [1.0 - 1e-4, -2.0 + 1e-4, 0.5], rtol=1e-6)
    assert st_.step == 1


def test_adam_determinism(rng):
    grads = [rng.standard_normal((3, 3)) for _ in range(10)]
    a, b = [np.ones((3, 3))], [np.ones((3, 3))]
    sa, sb = nn.AdamState.for_params(a), nn.AdamState.for_params(b)
    for g in grads:
        nn.adam_step(sa, a, [g])
        nn.adam_step(sb, b, [g.copy()])
    np.testing.assert_array_equal(a[0], b[0])


def test_clip_examples():
    g = [np.array([6.0, 8.0])]
    out, norm = nn.clip_global_norm(g, 5.0)
    assert norm == 10.0
    np.testing.assert_allclose(out[0], [3.0, 4.0])
    out, _ = nn.clip_global_norm([np.array([1.8, 2.4])], 5.0)
    np.testing.assert_array_equal(out[0], [1.8, 2.4])
    with pytest.raises(ValueError):
        nn.clip_global_norm(g, 0.0)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20), st.floats(0.1, 100))
def test_clip_bound(xs, c):
    out, _ = nn.clip_global_norm([np.array(xs)], c)
    assert nn.global_norm(out) <= c + 1e-9


def test_checkpoint_round_trip_and_bytes(tmp_path, rng):
    net = nn.init_xavier((12, 64, 64, 6), rng)
    opt = nn.AdamState.for_params(net.params)
    nn.adam_step(opt, net.params, [np.ones_like(p) for p in net.params])
    a, b = tmp_path / "a.npz", tmp_path / "b.npz"
    nn.save_checkpoint(a, {"actor": net}, {"actor": opt}, {"episode": 3})
    nn.save_checkpoint(b, {"actor": net.copy()}, {"actor": opt}, {"episode": 3})
    assert a.read_bytes() == b.read_bytes()
    nets, opts, extra = nn.load_checkpoint(a)
    for p, q in zip(nets["actor"].params, net.params):
        np.testing.assert_array_equal(p, q)
    assert opts["actor"].step == 1 and extra == {"episode": 3}


def test_checkpoint_version_guard(tmp_path, rng, monkeypatch):
    net = nn.init_xavier((2, 2), rng)
    p = tmp_path / "c.npz"
    monkeypatch.setattr(nn, "CHECKPOINT_VERSION", 99)
    nn.save_checkpoint(p, {"n": net})
    monkeypatch.setattr(nn, "CHECKPOINT_VERSION", 1)
    with pytest.raises(ValueError, match="version"):
        nn.load_checkpoint(p)
