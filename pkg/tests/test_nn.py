import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmco import nn
from cmco.errors import ShapeError


# ---------------------------------------------------------------- scalar oracles


def matmul_loop(x, W, b):
    B, I = len(x), len(W)
    O = len(W[0])
    out = [[0.0] * O for _ in range(B)]
    for i in range(B):
        for j in range(O):
            s = b[j]
            for k in range(I):
                s += x[i][k] * W[k][j]
            out[i][j] = s
    return out


def sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def gru_loop(x, h, p):
    """GRU written one scalar at a time, gates (r, z, n)."""
    H, I = len(h), len(x)
    Wi, Wh, bi, bh = p["W_ih"], p["W_hh"], p["b_ih"], p["b_hh"]

    def pre(W, v, b, gate, j):
        return b[gate * H + j] + sum(v[k] * W[k][gate * H + j] for k in range(len(v)))

    out = []
    for j in range(H):
        r = sig(pre(Wi, x, bi, 0, j) + pre(Wh, h, bh, 0, j))
        z = sig(pre(Wi, x, bi, 1, j) + pre(Wh, h, bh, 1, j))
        n = math.tanh(pre(Wi, x, bi, 2, j) + r * pre(Wh, h, bh, 2, j))
        out.append((1 - z) * n + z * h[j])
    return out


def lstm_loop(x, h, c, p):
    H = len(h)
    Wi, Wh, bi, bh = p["W_ih"], p["W_hh"], p["b_ih"], p["b_hh"]

    def pre(gate, j):
        s = bi[gate * H + j] + bh[gate * H + j]
        s += sum(x[k] * Wi[k][gate * H + j] for k in range(len(x)))
        s += sum(h[k] * Wh[k][gate * H + j] for k in range(H))
        return s

    hn, cn = [], []
    for j in range(H):
        i, f, g, o = sig(pre(0, j)), sig(pre(1, j)), math.tanh(pre(2, j)), sig(pre(3, j))
        cj = f * c[j] + i * g
        cn.append(cj)
        hn.append(o * math.tanh(cj))
    return hn, cn


def rnn_params(rng, I, H, blocks, scale=0.5):
    return {
        "W_ih": rng.normal(0, scale, (I, blocks * H)),
        "W_hh": rng.normal(0, scale, (H, blocks * H)),
        "b_ih": rng.normal(0, scale, blocks * H),
        "b_hh": rng.normal(0, scale, blocks * H),
    }


def zero_params(I, H, blocks):
    return {"W_ih": np.zeros((I, blocks * H)), "W_hh": np.zeros((H, blocks * H)),
            "b_ih": np.zeros(blocks * H), "b_hh": np.zeros(blocks * H)}


# ---------------------------------------------------------------- dense


def test_dense_identity():
    y = nn.dense_forward(np.array([[1.0, 2.0]]), np.eye(2), np.zeros(2), "none")
    np.testing.assert_array_equal(y, [[1.0, 2.0]])


def test_dense_zero_input_passes_bias_through_relu():
    W = np.random.default_rng(0).normal(size=(2, 2))
    y = nn.dense_forward(np.zeros((1, 2)), W, np.array([3.0, -3.0]), "relu")
    np.testing.assert_array_equal(y, [[3.0, 0.0]])


@pytest.mark.parametrize("act", ["none", "tanh", "relu"])
def test_dense_matches_triple_loop(act):
    rng = np.random.default_rng(1)
    x, W, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
    ref = np.array(matmul_loop(x.tolist(), W.tolist(), b.tolist()))
    ref = {"none": ref, "tanh": np.tanh(ref), "relu": np.maximum(ref, 0)}[act]
    np.testing.assert_allclose(nn.dense_forward(x, W, b, act), ref, rtol=0, atol=1e-12)


def test_dense_shape_mismatch():
    with pytest.raises(ShapeError):
        nn.dense_forward(np.zeros((1, 3)), np.zeros((2, 2)), np.zeros(2))


# ---------------------------------------------------------------- GRU / LSTM


def test_gru_zero_params_halves_state():
    h = np.array([0.3, -1.2, 2.0])
    out = nn.gru_step(np.array([0.7]), h, zero_params(1, 3, 3))
    np.testing.assert_array_equal(out, 0.5 * h)


def test_gru_zero_params_zero_state():
    out = nn.gru_step(np.array([5.0]), np.zeros(3), zero_params(1, 3, 3))
    np.testing.assert_array_equal(out, np.zeros(3))


def test_gru_matches_scalar_loop():
    rng = np.random.default_rng(2)
    p = rnn_params(rng, 3, 4, 3)
    x, h = rng.normal(size=3), rng.normal(size=4)
    ref = gru_loop(x.tolist(), h.tolist(), {k: v.tolist() for k, v in p.items()})
    np.testing.assert_allclose(nn.gru_step(x, h, p), ref, rtol=0, atol=1e-12)


def test_gru_sequence_matches_repeated_steps():
    rng = np.random.default_rng(3)
    p = rnn_params(rng, 2, 5, 3)
    x = rng.normal(size=(4, 6, 2))
    hs, _ = nn.gru_sequence(x, None, p)
    h = np.zeros((4, 5))
    for t in range(6):
        h = nn.gru_step(x[:, t], h, p)
        np.testing.assert_allclose(hs[:, t], h, rtol=0, atol=1e-12)


def test_lstm_zero_params_zero_state():
    h, c = nn.lstm_step(np.array([1.0]), (np.zeros(2), np.zeros(2)), zero_params(1, 2, 4))
    np.testing.assert_array_equal(h, 0)
    np.testing.assert_array_equal(c, 0)


def test_lstm_zero_params_closed_form():
    c0 = np.array([0.4, -2.0, 1.5])
    h, c = nn.lstm_step(np.array([3.0]), (np.zeros(3), c0), zero_params(1, 3, 4))
    np.testing.assert_array_equal(c, 0.5 * c0)
    np.testing.assert_array_equal(h, 0.5 * np.tanh(0.5 * c0))


def test_lstm_matches_scalar_loop():
    rng = np.random.default_rng(4)
    p = rnn_params(rng, 2, 3, 4)
    x, h, c = rng.normal(size=2), rng.normal(size=3), rng.normal(size=3)
    rh, rc = lstm_loop(x.tolist(), h.tolist(), c.tolist(), {k: v.tolist() for k, v in p.items()})
    oh, oc = nn.lstm_step(x, (h, c), p)
    np.testing.assert_allclose(oh, rh, rtol=0, atol=1e-12)
    np.testing.assert_allclose(oc, rc, rtol=0, atol=1e-12)


def test_lstm_sequence_matches_repeated_steps():
    rng = np.random.default_rng(5)
    p = rnn_params(rng, 2, 3, 4)
    x = rng.normal(size=(2, 5, 2))
    hs, _ = nn.lstm_sequence(x, None, p)
    h = c = np.zeros((2, 3))
    for t in range(5):
        h, c = nn.lstm_step(x[:, t], (h, c), p)
    np.testing.assert_allclose(hs[:, -1], h, rtol=0, atol=1e-12)


def test_recurrent_shape_errors():
    with pytest.raises(ShapeError):
        nn.gru_step(np.zeros(2), np.zeros(3), zero_params(1, 3, 3))
    with pytest.raises(ShapeError):
        nn.lstm_step(np.zeros(1), (np.zeros(2), np.zeros(3)), zero_params(1, 3, 4))


# ---------------------------------------------------------------- layer norm


def test_layer_norm_constant_input():
    out = nn.layer_norm(np.full(5, 3.7), np.ones(5), np.zeros(5))
    np.testing.assert_array_equal(out, np.zeros(5))


def test_layer_norm_already_standard():
    out = nn.layer_norm(np.array([-1.0, 1.0]), np.ones(2), np.zeros(2), eps=1e-300)
    np.testing.assert_allclose(out, [-1.0, 1.0], rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40).filter(lambda v: np.std(v) > 1e-2))
def test_layer_norm_moments(values):
    x = np.array(values)
    out = nn.layer_norm(x, np.ones(x.size), np.zeros(x.size))
    assert abs(out.mean()) < 1e-10
    assert abs(out.var() - x.var() / (x.var() + nn.LAYER_NORM_EPS)) < 1e-12
    # with eps small relative to the variance the output is unit-variance
    if x.var() > 10.0:
        assert abs(out.var() - 1.0) < 1e-6


# ---------------------------------------------------------------- dropout


def test_dropout_p_zero_is_identity():
    x = np.arange(6.0).reshape(2, 3)
    y, keep = nn.dropout_apply(x, 0.0, nn.RngStream(1, 0), True)
    np.testing.assert_array_equal(y, x)
    np.testing.assert_array_equal(keep, np.ones_like(x))


def test_dropout_inactive_is_identity():
    x = np.arange(6.0)
    y, keep = nn.dropout_apply(x, 0.9, nn.RngStream(1, 0), False)
    np.testing.assert_array_equal(y, x)
    np.testing.assert_array_equal(keep, 1.0)


def test_dropout_rate_law_of_large_numbers():
    x = np.full(10 ** 6, 2.0)
    y, keep = nn.dropout_apply(x, 0.1, nn.RngStream(42, 0), True)
    assert abs(keep.mean() - 0.9) < 0.002
    assert abs(y.mean() - 2.0) / 2.0 < 0.005


def test_dropout_reproducible_and_stream_dependent():
    x = np.ones(1000)
    a = nn.dropout_apply(x, 0.3, nn.RngStream(7, 3), True)[1]
    b = nn.dropout_apply(x, 0.3, nn.RngStream(7, 3), True)[1]
    c = nn.dropout_apply(x, 0.3, nn.RngStream(7, 4), True)[1]
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("p", [1.0, 1.5, -0.1])
def test_dropout_invalid_rate(p):
    with pytest.raises(ValueError):
        nn.dropout_apply(np.ones(3), p, nn.RngStream(0), True)


# ---------------------------------------------------------------- gradient checks


def test_grad_check_linear_mse():
    rng = np.random.default_rng(6)
    x, t = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    params = {"W": rng.normal(size=(3, 2)), "b": rng.normal(size=2)}

    def f(p):
        y, cache = nn.dense_forward_cached(x, p["W"], p["b"])
        d = y - t
        _, dW, db = nn.dense_backward(2 * d / d.size, cache)
        return float(np.mean(d * d)), {"W": dW, "b": db}

    rep = nn.grad_check(params, f, step=1e-5, tol=1e-7)
    assert rep.passed, rep
    assert rep.max_rel_error < 1e-7


def test_grad_check_gru_three_steps():
    rng = np.random.default_rng(7)
    params = rnn_params(rng, 2, 3, 3)
    x, t = rng.normal(size=(2, 3, 2)), rng.normal(size=(2, 3, 3))

    def f(p):
        hs, cache = nn.gru_sequence(x, None, p)
        d = hs - t
        _, g = nn.gru_sequence_backward(2 * d / d.size, cache)
        return float(np.mean(d * d)), g

    rep = nn.grad_check(params, f)
    assert rep.max_rel_error < 1e-4, rep


def test_grad_check_tanh_trunk():
    rng = np.random.default_rng(8)
    x, t = rng.uniform(-1, 1, size=(6, 2)), rng.normal(size=(6, 1))
    params = {"W0": rng.normal(size=(2, 8)), "b0": rng.normal(size=8),
              "W1": rng.normal(size=(8, 1)), "b1": rng.normal(size=1)}

    def f(p):
        h, c0 = nn.dense_forward_cached(x, p["W0"], p["b0"], "tanh")
        y, c1 = nn.dense_forward_cached(h, p["W1"], p["b1"])
        d = y - t
        dh, dW1, db1 = nn.dense_backward(2 * d / d.size, c1)
        _, dW0, db0 = nn.dense_backward(dh, c0)
        return float(np.mean(d * d)), {"W0": dW0, "b0": db0, "W1": dW1, "b1": db1}

    rep = nn.grad_check(params, f)
    assert rep.max_rel_error < 1e-6, rep


def test_grad_check_reports_wrong_parameter():
    params = {"a": np.array([1.0, 2.0]), "b": np.array([0.5])}

    def f(p):
        loss = float((p["a"] ** 2).sum() + 3 * p["b"][0])
        return loss, {"a": 2 * p["a"], "b": np.array([1.0])}  # b is wrong on purpose

    rep = nn.grad_check(params, f)
    assert rep.failures == ["b"]
    assert not rep.passed


def test_grad_check_refuses_large_fragments():
    with pytest.raises(ValueError):
        nn.grad_check({"w": np.zeros(2000)}, lambda p: (0.0, {"w": np.zeros(2000)}))
