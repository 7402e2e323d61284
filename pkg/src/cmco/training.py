"""Supervised training: z-score normalization, MSE, Adam, plateau decay."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import deeponet as don
from .errors import ConfigError, NumericError
from .nn import RngStream
from .tasks import Dataset

log = logging.getLogger(__name__)

STD_FLOOR = 1e-12

# stream-id namespaces inside one training seed
_SHUFFLE = 1 << 40
_MASKS = 2 << 40


@dataclass
class NormStats:
    input_mean: np.ndarray
    input_std: np.ndarray
    output_mean: float
    output_std: float
    coord_min: np.ndarray
    coord_max: np.ndarray

    def normalize_inputs(self, u):
        return (u - self.input_mean) / self.input_std

    def normalize_outputs(self, y):
        return (y - self.output_mean) / self.output_std

    def denormalize_outputs(self, y_n):
        return y_n * self.output_std + self.output_mean

    def normalize_coords(self, r):
        span = self.coord_max - self.coord_min
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, 2.0 * (r - self.coord_min) / safe - 1.0, 0.0)

    def to_dict(self):
        return {k: (v.tolist() if isinstance(v, np.ndarray) else float(v))
                for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["input_mean"], dtype=np.float64),
                   np.asarray(d["input_std"], dtype=np.float64),
                   float(d["output_mean"]), float(d["output_std"]),
                   np.asarray(d["coord_min"], dtype=np.float64),
                   np.asarray(d["coord_max"], dtype=np.float64))


def _floored(std, what):
    std = np.asarray(std, dtype=np.float64)
    low = std < STD_FLOOR
    if np.any(low):
        log.warning("constant %s detected; std floored to %g", what, STD_FLOOR)
    return np.where(low, STD_FLOOR, std)


def compute_norm_stats(train: Dataset) -> NormStats:
    """Z-score statistics from the training split only."""
    if train.role != "train":
        raise ConfigError(f"normalization statistics must come from the train split, got {train.role!r}")
    u = train.branch_inputs.reshape(-1, train.branch_inputs.shape[-1])
    return NormStats(
        input_mean=u.mean(axis=0),
        input_std=_floored(u.std(axis=0), "input channel"),
        output_mean=float(train.fields.mean()),
        output_std=float(_floored(train.fields.std(), "output field")),
        coord_min=train.grid.min(axis=0),
        coord_max=train.grid.max(axis=0),
    )


def mse_loss(pred, truth):
    """Mean squared error over every entry, with its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ConfigError(f"mse_loss shape mismatch {pred.shape} vs {truth.shape}")
    diff = pred - truth
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def relative_l2(pred, truth):
    """Dataset-level ||pred - truth||_F / ||truth||_F."""
    return float(np.linalg.norm(pred - truth) / np.linalg.norm(truth))


# ---------------------------------------------------------------- config


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 200
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    plateau_threshold: float = 1e-4
    min_lr: float = 1e-6
    seed: int = 0

    def validate(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0 < self.plateau_factor < 1:
            raise ConfigError("plateau_factor must lie in (0, 1)")


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place.  Advances ``state.t``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name} at Adam step {state.t + 1}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


# ---------------------------------------------------------------- plateau schedule


@dataclass
class PlateauState:
    lr: float
    factor: float = 0.5
    patience: int = 10
    threshold: float = 1e-4
    min_lr: float = 1e-6
    best: float = math.inf
    bad_epochs: int = 0


def plateau_step(state: PlateauState, epoch_loss):
    """Record one epoch loss and return the (possibly reduced) learning rate.

    A loss counts as an improvement when it beats the best so far by more
    than ``threshold`` relative.  After more than ``patience`` epochs without
    one, the rate is multiplied by ``factor`` and clamped at ``min_lr``.
    """
    if not math.isfinite(epoch_loss):
        raise NumericError("plateau scheduler received a non-finite loss")
    if epoch_loss < state.best * (1.0 - state.threshold):
        state.best = epoch_loss
        state.bad_epochs = 0
    else:
        state.bad_epochs += 1
    if state.bad_epochs > state.patience:
        state.lr = max(state.lr * state.factor, state.min_lr)
        state.bad_epochs = 0
    return state.lr


# ---------------------------------------------------------------- fit


def fit(model: don.DeepONetModel, train: Dataset, config: TrainConfig, progress=None):
    """Train ``model`` in place on the train split.

    Attaches normalization statistics computed from ``train`` when the model
    has none.  Returns ``(model, history)`` where history holds one
    ``(epoch, lr, train_loss)`` tuple per epoch; ``train_loss`` is the mean
    mini-batch loss in normalized units with dropout active.
    """
    config.validate()
    if train.role != "train":
        raise ConfigError(f"fit only reads the train split, got role {train.role!r}")
    if model.norm is None:
        model.norm = compute_norm_stats(train)
    u_n = model.norm.normalize_inputs(train.branch_inputs)
    r_n = model.norm.normalize_coords(train.grid)
    y_n = model.norm.normalize_outputs(train.fields)
    N, T, _ = u_n.shape
    P = r_n.shape[0]

    adam = AdamState()
    sched = PlateauState(config.learning_rate, config.plateau_factor, config.plateau_patience,
                         config.plateau_threshold, config.min_lr)
    history = []
    n_batches = math.ceil(N / config.batch_size)
    for epoch in range(config.epochs):
        lr = sched.lr
        perm = RngStream(config.seed, _SHUFFLE + epoch).generator().permutation(N)
        total = 0.0
        for b in range(n_batches):
            idx = perm[b * config.batch_size:(b + 1) * config.batch_size]
            rng = RngStream(config.seed, _MASKS + epoch * n_batches + b)
            masks = don.draw_masks(model, T, P, rng, batch=len(idx))
            loss, grads = don.loss_and_grad(model, u_n[idx], r_n, y_n[idx], masks)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            adam_step(model.params, grads, adam, lr, config.beta1, config.beta2, config.adam_eps)
            total += loss * len(idx)
        epoch_loss = total / N
        history.append((epoch + 1, lr, epoch_loss))
        plateau_step(sched, epoch_loss)
        if progress is not None:
            progress(epoch + 1, lr, epoch_loss)
    return model, history


def predict_point(model, data: Dataset):
    """Deterministic (dropout off) predictions in physical units."""
    return don.forward(model, data.branch_inputs, data.grid)
