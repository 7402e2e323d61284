"""Sequential DeepONet: recurrent branch, dense trunk, inner-product readout.

The prediction at query point ``r`` for an input sequence ``u`` is

    G(u)(r) = sum_l  trunk(r)_l * branch(u)_l  + bias

The branch runs a stack of GRU or LSTM layers over the whole sequence and
keeps the final hidden state of the top layer, optionally layer-normalized.
The trunk maps each query point independently through a dense stack whose
last layer is linear.  Dropout sits between stacked recurrent layers and
after every hidden trunk layer; it is the only stochastic element and is
what MC-dropout ensembling samples from.

All internal arithmetic happens in normalized units.  ``forward`` accepts
raw inputs and returns physical outputs using the ``NormStats`` attached to
the model (identity when none are attached yet).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .errors import ConfigError, NumericError, ShapeError

RECURRENT_KINDS = {"gru": 3, "lstm": 4}


@dataclass(frozen=True)
class BranchConfig:
    kind: str = "gru"
    input_channels: int = 1
    hidden: int = 256
    layers: int = 4
    dropout: float = 0.1
    layer_norm: bool = True

    def validate(self):
        if self.kind not in RECURRENT_KINDS:
            raise ConfigError(f"branch kind must be one of {sorted(RECURRENT_KINDS)}, got {self.kind!r}")
        if self.input_channels < 1 or self.hidden < 1 or self.layers < 1:
            raise ConfigError("branch input_channels, hidden and layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"branch dropout must lie in [0, 1), got {self.dropout}")


@dataclass(frozen=True)
class TrunkConfig:
    widths: tuple = (2, 128, 128, 128, 256)
    activation: str = "tanh"
    dropout: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    @property
    def query_dim(self):
        return self.widths[0]

    @property
    def embedding(self):
        return self.widths[-1]

    def validate(self):
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ConfigError(f"trunk widths must have >= 2 positive entries, got {list(self.widths)}")
        if self.activation not in ("tanh", "relu"):
            raise ConfigError(f"trunk activation must be tanh or relu, got {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"trunk dropout must lie in [0, 1), got {self.dropout}")


@dataclass
class DeepONetModel:
    branch: BranchConfig
    trunk: TrunkConfig
    params: dict = field(default_factory=dict)
    norm: object = None  # training.NormStats once fitted

    def copy(self):
        return replace(self, params={k: v.copy() for k, v in self.params.items()})


# Full-size architectures for cavity flow (ldc), plastic deformation and cosmic-ray dose.
REFERENCE_CONFIGS = {
    "ldc": (BranchConfig("lstm", 1, 256, 4, 0.1, True),
            TrunkConfig((2, 512, 512, 512, 256), "relu", 0.1)),
    "plastic": (BranchConfig("gru", 1, 256, 4, 0.1, True),
                TrunkConfig((2, 128, 128, 128, 256), "tanh", 0.1)),
    "cosmic": (BranchConfig("gru", 12, 256, 4, 0.1, True),
               TrunkConfig((2, 256, 256, 256, 256), "relu", 0.1)),
}


def parameter_names(branch: BranchConfig, trunk: TrunkConfig):
    """(name, shape) pairs in serialization order."""
    nb = RECURRENT_KINDS[branch.kind]
    H = branch.hidden
    out = []
    for layer in range(branch.layers):
        inp = branch.input_channels if layer == 0 else H
        pre = f"branch.rnn{layer}."
        out += [(pre + "W_ih", (inp, nb * H)), (pre + "W_hh", (H, nb * H)),
                (pre + "b_ih", (nb * H,)), (pre + "b_hh", (nb * H,))]
    if branch.layer_norm:
        out += [("branch.ln.gain", (H,)), ("branch.ln.shift", (H,))]
    for i, (a, b) in enumerate(zip(trunk.widths[:-1], trunk.widths[1:])):
        out += [(f"trunk.dense{i}.W", (a, b)), (f"trunk.dense{i}.b", (b,))]
    out.append(("bias", (1,)))
    return out


def closed_form_count(branch: BranchConfig, trunk: TrunkConfig) -> int:
    """Trainable parameter total, counted per block rather than from arrays."""
    nb = RECURRENT_KINDS[branch.kind]
    H, C = branch.hidden, branch.input_channels
    rec = nb * (C * H + H * H + 2 * H) + (branch.layers - 1) * nb * (2 * H * H + 2 * H)
    ln = 2 * H if branch.layer_norm else 0
    w = trunk.widths
    dense = sum(w[i] * w[i + 1] + w[i + 1] for i in range(len(w) - 1))
    return rec + ln + dense + 1


def parameter_count(model: DeepONetModel) -> int:
    return int(sum(p.size for p in model.params.values()))


def build_model(branch: BranchConfig, trunk: TrunkConfig, rng=0) -> DeepONetModel:
    """Initialize a model; ``rng`` is a seed, ``RngStream`` or ``Generator``."""
    branch.validate()
    trunk.validate()
    if trunk.embedding != branch.hidden:
        raise ConfigError(
            f"trunk embedding size {trunk.embedding} != branch hidden size {branch.hidden}")
    if isinstance(rng, nn.RngStream):
        rng = rng.generator()
    elif not isinstance(rng, np.random.Generator):
        rng = nn.RngStream(int(rng), 0).generator()
    nb = RECURRENT_KINDS[branch.kind]
    params = {}
    for layer in range(branch.layers):
        inp = branch.input_channels if layer == 0 else branch.hidden
        for k, v in nn.init_recurrent(rng, inp, branch.hidden, nb).items():
            params[f"branch.rnn{layer}.{k}"] = v
    if branch.layer_norm:
        params["branch.ln.gain"] = np.ones(branch.hidden)
        params["branch.ln.shift"] = np.zeros(branch.hidden)
    for i, (a, b) in enumerate(zip(trunk.widths[:-1], trunk.widths[1:])):
        d = nn.init_dense(rng, a, b)
        params[f"trunk.dense{i}.W"] = d["W"]
        params[f"trunk.dense{i}.b"] = d["b"]
    params["bias"] = np.zeros(1)
    model = DeepONetModel(branch, trunk, params)
    assert parameter_count(model) == closed_form_count(branch, trunk)
    return model


# ---------------------------------------------------------------- masks


@dataclass
class DropoutMasks:
    """Inverted-dropout multipliers; ``None`` entries mean no dropout there."""

    branch: list
    trunk: list


def no_masks(model):
    return DropoutMasks([None] * (model.branch.layers - 1),
                        [None] * (len(model.trunk.widths) - 2))


def draw_masks(model, n_steps, n_points, rng, batch=None):
    """Draw one set of dropout masks.

    With ``batch=None`` the branch masks have shape (T, H) and are shared by
    every input in a call, so one draw defines one ensemble member.  With an
    integer batch each sample gets its own branch mask (training mode).
    Trunk masks are (P, width) and always shared across the batch.
    """
    if isinstance(rng, nn.RngStream):
        rng = rng.generator()
    b, t = model.branch, model.trunk
    bshape = (n_steps, b.hidden) if batch is None else (batch, n_steps, b.hidden)
    branch = [nn.dropout_mask(bshape, b.dropout, rng) if b.dropout > 0 else None
              for _ in range(b.layers - 1)]
    trunk = [nn.dropout_mask((n_points, w), t.dropout, rng) if t.dropout > 0 else None
             for w in t.widths[1:-1]]
    return DropoutMasks(branch, trunk)


# ---------------------------------------------------------------- core passes


def _rnn_fns(kind):
    if kind == "gru":
        return nn.gru_sequence, nn.gru_sequence_backward
    return nn.lstm_sequence, nn.lstm_sequence_backward


def _layer_params(params, prefix):
    return {k: params[prefix + k] for k in ("W_ih", "W_hh", "b_ih", "b_hh")}


def branch_forward(model, u_n, masks):
    """Normalized sequences (B, T, C) -> embedding (B, H)."""
    seq_fn, _ = _rnn_fns(model.branch.kind)
    x = u_n
    caches = []
    for layer in range(model.branch.layers):
        hs, c = seq_fn(x, None, _layer_params(model.params, f"branch.rnn{layer}."))
        caches.append(c)
        if layer < model.branch.layers - 1 and masks.branch[layer] is not None:
            hs = hs * masks.branch[layer]
        x = hs
    last = x[:, -1, :]
    ln_cache = None
    if model.branch.layer_norm:
        last, ln_cache = nn.layer_norm_cached(
            last, model.params["branch.ln.gain"], model.params["branch.ln.shift"])
    return last, (caches, ln_cache, x.shape)


def branch_backward(model, dpsi, cache, masks, grads):
    _, seq_bwd = _rnn_fns(model.branch.kind)
    caches, ln_cache, shape = cache
    if ln_cache is not None:
        dpsi, grads["branch.ln.gain"], grads["branch.ln.shift"] = nn.layer_norm_backward(dpsi, ln_cache)
    dhs = np.zeros(shape)
    dhs[:, -1, :] = dpsi
    for layer in reversed(range(model.branch.layers)):
        dx, g = seq_bwd(dhs, caches[layer])
        for k, v in g.items():
            grads[f"branch.rnn{layer}.{k}"] = v
        if layer > 0:
            m = masks.branch[layer - 1]
            dhs = dx if m is None else dx * m
    return grads


def trunk_forward(model, r_n, masks):
    """Normalized query points (P, d) -> embedding (P, q)."""
    h = r_n
    caches = []
    n = len(model.trunk.widths) - 1
    for i in range(n):
        act = model.trunk.activation if i < n - 1 else "none"
        h, c = nn.dense_forward_cached(h, model.params[f"trunk.dense{i}.W"],
                                       model.params[f"trunk.dense{i}.b"], act)
        caches.append(c)
        if i < n - 1 and masks.trunk[i] is not None:
            h = h * masks.trunk[i]
    return h, caches


def trunk_backward(model, dphi, caches, masks, grads):
    n = len(caches)
    d = dphi
    for i in reversed(range(n)):
        if i < n - 1 and masks.trunk[i] is not None:
            d = d * masks.trunk[i]
        d, grads[f"trunk.dense{i}.W"], grads[f"trunk.dense{i}.b"] = nn.dense_backward(d, caches[i])
    return grads


def forward_normalized(model, u_n, r_n, masks=None):
    """Core operator in normalized units: (B, T, C), (P, d) -> (B, P)."""
    if masks is None:
        masks = no_masks(model)
    psi, bcache = branch_forward(model, u_n, masks)
    phi, tcache = trunk_forward(model, r_n, masks)
    out = psi @ phi.T + model.params["bias"][0]
    return out, (psi, phi, bcache, tcache, masks)


def backward_normalized(model, dout, cache):
    psi, phi, bcache, tcache, masks = cache
    grads = {"bias": np.array([dout.sum()])}
    branch_backward(model, dout @ phi, bcache, masks, grads)
    trunk_backward(model, dout.T @ psi, tcache, masks, grads)
    return {k: grads[k] for k in model.params}


def loss_and_grad(model, u_n, r_n, y_n, masks=None):
    """Mean squared error over all (sample, point) entries and its gradient."""
    out, cache = forward_normalized(model, u_n, r_n, masks)
    diff = out - y_n
    loss = float(np.mean(diff * diff))
    return loss, backward_normalized(model, 2.0 * diff / diff.size, cache)


# ---------------------------------------------------------------- public forward


def _check_inputs(model, u, grid):
    u = np.asarray(u, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    single = u.ndim == 2
    if single:
        u = u[None]
    if u.ndim != 3 or u.shape[2] != model.branch.input_channels:
        raise ShapeError(
            f"input function must be (T, {model.branch.input_channels}) or "
            f"(N, T, {model.branch.input_channels}), got {u.shape}")
    if grid.ndim == 1:
        grid = grid[:, None]
    if grid.ndim != 2 or grid.shape[1] != model.trunk.query_dim:
        raise ShapeError(f"query grid must be (P, {model.trunk.query_dim}), got {grid.shape}")
    return u, grid, single


def normalize_inputs(model, u, grid):
    if model.norm is None:
        return u, grid
    return model.norm.normalize_inputs(u), model.norm.normalize_coords(grid)


def forward(model, u, grid, dropout_active=False, rng=None):
    """Predict the field in physical units.

    ``u`` is (T, C) or a batch (N, T, C); ``grid`` is (P, d).  Returns (P,)
    or (N, P).  With ``dropout_active`` a fresh set of masks is drawn from
    ``rng`` and shared by every sample in the batch.
    """
    u, grid, single = _check_inputs(model, u, grid)
    u_n, r_n = normalize_inputs(model, u, grid)
    masks = None
    if dropout_active:
        if rng is None:
            raise ValueError("dropout_active requires an rng")
        masks = draw_masks(model, u.shape[1], grid.shape[0], rng)
    out, _ = forward_normalized(model, u_n, r_n, masks)
    if model.norm is not None:
        out = model.norm.denormalize_outputs(out)
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite value in model output")
    return out[0] if single else out
