"""Dense-array layers with hand-written backward passes.

Every layer is a pair of functions: a forward that returns its output and a
cache, and a backward that consumes the cache.  Parameters live in plain
dicts of float64 arrays so optimizers and serializers can treat a model as
a flat name -> array mapping.

Recurrent blocks follow the two-bias convention (an input-side and a
hidden-side bias per gate block).  Gate order is (r, z, n) for GRU and
(i, f, g, o) for LSTM, stacked along the last weight axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ShapeError

LAYER_NORM_EPS = 1e-5
_MASK64 = (1 << 64) - 1

ACTIVATIONS = ("tanh", "relu", "none")


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream addressed by ``(seed, stream_id)``.

    Distinct stream ids map to independent children of the same
    ``SeedSequence`` so they never overlap.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=self.seed & _MASK64, spawn_key=(self.stream_id & _MASK64,)
        )
        return np.random.Generator(np.random.PCG64(ss))


def _check(cond, msg):
    if not cond:
        raise ShapeError(msg)


def sigmoid(x):
    # tanh form never overflows
    return 0.5 + 0.5 * np.tanh(0.5 * x)


# ---------------------------------------------------------------- dense


def dense_forward(x, W, b, activation="none"):
    """``act(x @ W + b)`` for ``x`` of shape (B, I) and ``W`` of shape (I, O)."""
    y, _ = dense_forward_cached(x, W, b, activation)
    return y


def dense_forward_cached(x, W, b, activation="none"):
    x = np.asarray(x, dtype=np.float64)
    _check(W.ndim == 2 and x.shape[-1] == W.shape[0],
           f"dense: input width {x.shape[-1]} does not match weight rows {W.shape[0]}")
    _check(b.shape == (W.shape[1],), f"dense: bias shape {b.shape} != ({W.shape[1]},)")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    a = x @ W + b
    if activation == "tanh":
        y = np.tanh(a)
    elif activation == "relu":
        y = np.maximum(a, 0.0)
    else:
        y = a
    return y, (x, W, a, y, activation)


def dense_backward(dy, cache):
    """Return ``(dx, dW, db)``."""
    x, W, a, y, activation = cache
    if activation == "tanh":
        da = dy * (1.0 - y * y)
    elif activation == "relu":
        da = dy * (a > 0)
    else:
        da = dy
    x2 = x.reshape(-1, x.shape[-1])
    da2 = da.reshape(-1, da.shape[-1])
    return da @ W.T, x2.T @ da2, da2.sum(axis=0)


# ---------------------------------------------------------------- GRU


def _split(a, n):
    return np.split(a, n, axis=-1)


def _check_rnn(params, n_blocks, input_size=None):
    W_ih, W_hh = params["W_ih"], params["W_hh"]
    H = W_hh.shape[0]
    _check(W_hh.shape == (H, n_blocks * H), f"W_hh shape {W_hh.shape} != ({H}, {n_blocks * H})")
    _check(W_ih.shape[1] == n_blocks * H, f"W_ih shape {W_ih.shape} inconsistent with H={H}")
    _check(params["b_ih"].shape == (n_blocks * H,), "b_ih shape mismatch")
    _check(params["b_hh"].shape == (n_blocks * H,), "b_hh shape mismatch")
    if input_size is not None:
        _check(input_size == W_ih.shape[0],
               f"input width {input_size} != W_ih rows {W_ih.shape[0]}")
    return H


def gru_step(x_t, h_prev, params):
    """One GRU update; works on single vectors or (B, ·) batches."""
    H = _check_rnn(params, 3, np.shape(x_t)[-1])
    _check(np.shape(h_prev)[-1] == H, "h_prev width mismatch")
    gi = x_t @ params["W_ih"] + params["b_ih"]
    gh = h_prev @ params["W_hh"] + params["b_hh"]
    ir, iz, in_ = _split(gi, 3)
    hr, hz, hn = _split(gh, 3)
    r = sigmoid(ir + hr)
    z = sigmoid(iz + hz)
    n = np.tanh(in_ + r * hn)
    return (1.0 - z) * n + z * h_prev


def gru_sequence(x, h0, params):
    """Run a GRU over ``x`` of shape (B, T, I); returns all hidden states (B, T, H)."""
    B, T, I = x.shape
    H = _check_rnn(params, 3, I)
    if h0 is None:
        h0 = np.zeros((B, H))
    gi_all = (x.reshape(B * T, I) @ params["W_ih"] + params["b_ih"]).reshape(B, T, 3 * H)
    hs = np.empty((B, T, H))
    steps = []
    h = h0
    for t in range(T):
        gi = gi_all[:, t]
        gh = h @ params["W_hh"] + params["b_hh"]
        rz = sigmoid(gi[:, :2 * H] + gh[:, :2 * H])
        r, z = rz[:, :H], rz[:, H:]
        hn = gh[:, 2 * H:]
        n = np.tanh(gi[:, 2 * H:] + r * hn)
        h_new = (1.0 - z) * n + z * h
        steps.append((h, r, z, n, hn))
        hs[:, t] = h_new
        h = h_new
    return hs, (x, params, steps)


def gru_sequence_backward(dhs, cache):
    """Backpropagate through time; returns ``(dx, grads)``."""
    x, params, steps = cache
    B, T, I = x.shape
    W_hh = params["W_hh"]
    H = W_hh.shape[0]
    dgi_all = np.empty((B, T, 3 * H))
    dW_hh = np.zeros_like(W_hh)
    db_hh = np.zeros(3 * H)
    dh_next = np.zeros((B, H))
    for t in reversed(range(T)):
        h_prev, r, z, n, hn = steps[t]
        dh = dhs[:, t] + dh_next
        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        dan = dn * (1.0 - n * n)
        dr = dan * hn
        dgi = dgi_all[:, t]
        dgi[:, :H] = dr * r * (1.0 - r)
        dgi[:, H:2 * H] = dz * z * (1.0 - z)
        dgi[:, 2 * H:] = dan
        dgh = dgi.copy()
        dgh[:, 2 * H:] *= r
        dW_hh += h_prev.T @ dgh
        db_hh += dgh.sum(axis=0)
        dh_next = dh * z + dgh @ W_hh.T
    dgi2 = dgi_all.reshape(B * T, 3 * H)
    grads = {
        "W_ih": x.reshape(B * T, I).T @ dgi2,
        "W_hh": dW_hh,
        "b_ih": dgi2.sum(axis=0),
        "b_hh": db_hh,
    }
    dx = (dgi2 @ params["W_ih"].T).reshape(B, T, I)
    return dx, grads


# ---------------------------------------------------------------- LSTM


def lstm_step(x_t, state, params):
    """One LSTM update; ``state`` is ``(h, c)``.  Returns the new ``(h, c)``."""
    h_prev, c_prev = state
    H = _check_rnn(params, 4, np.shape(x_t)[-1])
    _check(np.shape(h_prev)[-1] == H and np.shape(c_prev)[-1] == H, "state width mismatch")
    a = x_t @ params["W_ih"] + params["b_ih"] + h_prev @ params["W_hh"] + params["b_hh"]
    ai, af, ag, ao = _split(a, 4)
    i, f, g, o = sigmoid(ai), sigmoid(af), np.tanh(ag), sigmoid(ao)
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def lstm_sequence(x, state0, params):
    B, T, I = x.shape
    H = _check_rnn(params, 4, I)
    if state0 is None:
        h, c = np.zeros((B, H)), np.zeros((B, H))
    else:
        h, c = state0
    gi_all = (x.reshape(B * T, I) @ params["W_ih"] + params["b_ih"]).reshape(B, T, 4 * H)
    hs = np.empty((B, T, H))
    steps = []
    for t in range(T):
        a = gi_all[:, t] + h @ params["W_hh"] + params["b_hh"]
        ai, af, ag, ao = _split(a, 4)
        i, f, g, o = sigmoid(ai), sigmoid(af), np.tanh(ag), sigmoid(ao)
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        steps.append((h, c, i, f, g, o, tc))
        hs[:, t] = h_new
        h, c = h_new, c_new
    return hs, (x, params, steps)


def lstm_sequence_backward(dhs, cache):
    x, params, steps = cache
    B, T, I = x.shape
    W_hh = params["W_hh"]
    H = W_hh.shape[0]
    da_all = np.empty((B, T, 4 * H))
    dW_hh = np.zeros_like(W_hh)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in reversed(range(T)):
        h_prev, c_prev, i, f, g, o, tc = steps[t]
        dh = dhs[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            do * o * (1.0 - o),
        ], axis=1)
        da_all[:, t] = da
        dW_hh += h_prev.T @ da
        dh_next = da @ W_hh.T
        dc_next = dc * f
    da2 = da_all.reshape(B * T, 4 * H)
    db = da2.sum(axis=0)
    grads = {
        "W_ih": x.reshape(B * T, I).T @ da2,
        "W_hh": dW_hh,
        "b_ih": db,
        "b_hh": db.copy(),
    }
    dx = (da2 @ params["W_ih"].T).reshape(B, T, I)
    return dx, grads


# ---------------------------------------------------------------- layer norm


def layer_norm(x, gain, shift, eps=LAYER_NORM_EPS):
    y, _ = layer_norm_cached(x, gain, shift, eps)
    return y


def layer_norm_cached(x, gain, shift, eps=LAYER_NORM_EPS):
    """Normalize over the last axis with the biased (1/H) variance."""
    x = np.asarray(x, dtype=np.float64)
    _check(x.shape[-1] >= 2, "layer_norm needs at least 2 features")
    _check(gain.shape == (x.shape[-1],) and shift.shape == gain.shape,
           "layer_norm gain/shift shape mismatch")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return gain * xhat + shift, (xhat, inv, gain)


def layer_norm_backward(dy, cache):
    """Return ``(dx, dgain, dshift)``."""
    xhat, inv, gain = cache
    dxhat = dy * gain
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)


# ---------------------------------------------------------------- dropout


def _check_rate(p):
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")


def dropout_mask(shape, p, rng):
    """Inverted-dropout multiplier: 0 for dropped entries, 1/(1-p) for kept ones."""
    _check_rate(p)
    if isinstance(rng, RngStream):
        rng = rng.generator()
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def dropout_apply(x, p, rng, active):
    """Apply inverted dropout.  Returns ``(y, keep)`` with ``keep`` a 0/1 mask."""
    _check_rate(p)
    x = np.asarray(x, dtype=np.float64)
    if not active:
        return x, np.ones_like(x)
    scaled = dropout_mask(x.shape, p, rng)
    return x * scaled, (scaled > 0).astype(np.float64)


# ---------------------------------------------------------------- initialization


def glorot_uniform(rng, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def init_dense(rng, fan_in, fan_out):
    return {"W": glorot_uniform(rng, fan_in, fan_out), "b": np.zeros(fan_out)}


def init_recurrent(rng, input_size, hidden, n_blocks):
    lim = 1.0 / math.sqrt(hidden)
    return {
        "W_ih": rng.uniform(-lim, lim, size=(input_size, n_blocks * hidden)),
        "W_hh": rng.uniform(-lim, lim, size=(hidden, n_blocks * hidden)),
        "b_ih": rng.uniform(-lim, lim, size=n_blocks * hidden),
        "b_hh": rng.uniform(-lim, lim, size=n_blocks * hidden),
    }


# ---------------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    tol: float
    max_rel_error: float = 0.0
    per_parameter: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures

    def __str__(self):
        status = "ok" if self.passed else "FAILED: " + ", ".join(self.failures)
        return f"grad_check max rel err {self.max_rel_error:.3e} (tol {self.tol:g}) {status}"


def grad_check(params: dict, loss_and_grad: Callable, step=1e-5, tol=1e-4, max_params=1000):
    """Compare analytic gradients with central differences, entry by entry.

    ``loss_and_grad(params)`` must return ``(loss, grads)`` where ``grads``
    is keyed like ``params``.  Parameters are perturbed in place and restored.
    The error measure is ``|analytic - numeric| / (|analytic| + 1e-8)``.
    """
    total = sum(p.size for p in params.values())
    if total > max_params:
        raise ValueError(f"grad_check is meant for small fragments ({total} > {max_params} params)")
    _, grads = loss_and_grad(params)
    report = GradCheckReport(tol=tol)
    for name, theta in params.items():
        analytic = np.asarray(grads[name], dtype=np.float64)
        _check(analytic.shape == theta.shape, f"gradient shape mismatch for {name}")
        worst = 0.0
        for i in range(theta.size):
            orig = theta.flat[i]
            theta.flat[i] = orig + step
            lp = loss_and_grad(params)[0]
            theta.flat[i] = orig - step
            lm = loss_and_grad(params)[0]
            theta.flat[i] = orig
            numeric = (lp - lm) / (2.0 * step)
            a = analytic.flat[i]
            worst = max(worst, abs(a - numeric) / (abs(a) + 1e-8))
        report.per_parameter[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
        if worst > tol:
            report.failures.append(name)
    return report
