"""Synthetic sequence-to-field datasets with independent oracles.

Three desk-scale generators, each mapping an input time series to a field
sampled on non-collocated query points:

* ``antiderivative`` - u(t) is a random truncated Fourier series, the field
  is y(x) = int_0^x u(t) dt (fine-grid trapezoid).
* ``heat1d`` - u(t) drives the left boundary of a 1-D rod; the field is the
  temperature profile at the final time (explicit FTCS finite differences).
* ``proxy_field`` - twelve noisy proxy channels observe a latent scalar
  sequence; the field is a smooth 2-D pattern whose amplitudes depend
  affinely on a weighted average of that sequence.

Samples are i.i.d. given the seed, which is what split-conformal
calibration needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import ConfigError
from .nn import RngStream

TASK_KINDS = ("antiderivative", "heat1d", "proxy_field")
ROLES = ("train", "calibration", "test", "all")

_TASK_DEFAULTS = {
    "antiderivative": {"n_modes": 4, "decay": 1.0, "offset_scale": 1.0, "fine_points": 10001},
    "heat1d": {"kappa": 0.1, "length": 1.0, "t_final": 1.0, "nx": 129, "cfl": 0.4,
               "n_modes": 3, "ramp_scale": 1.0},
    "proxy_field": {"noise": 0.05, "a0": 1.0, "a1": 0.8, "b0": 0.5, "b1": -0.6, "ar": 0.7},
}


@dataclass
class TaskSpec:
    kind: str = "antiderivative"
    n_samples: int = 1000
    steps: int = 64
    channels: int = 1
    points: int = 256
    seed: int = 0
    physics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"task kind must be one of {TASK_KINDS}, got {self.kind!r}")
        self.physics = {**_TASK_DEFAULTS[self.kind], **(self.physics or {})}

    def validate(self):
        if min(self.n_samples, self.steps, self.points, self.channels) < 1:
            raise ConfigError("n_samples, steps, channels and points must be >= 1")
        if self.kind in ("antiderivative", "heat1d") and self.channels != 1:
            raise ConfigError(f"{self.kind} task has a single input channel")

    def to_dict(self):
        return {"kind": self.kind, "n_samples": self.n_samples, "steps": self.steps,
                "channels": self.channels, "points": self.points, "seed": self.seed,
                "physics": dict(self.physics)}


@dataclass
class Dataset:
    branch_inputs: np.ndarray  # (N, T, C)
    grid: np.ndarray  # (P, d)
    fields: np.ndarray  # (N, P)
    role: str = "all"
    task: dict = field(default_factory=dict)
    oracle_tolerance: float = 0.0

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"unknown dataset role {self.role!r}")
        u, g, y = self.branch_inputs, self.grid, self.fields
        if u.ndim != 3 or g.ndim != 2 or y.ndim != 2:
            raise ConfigError("dataset arrays must be (N,T,C), (P,d), (N,P)")
        if u.shape[0] != y.shape[0] or g.shape[0] != y.shape[1]:
            raise ConfigError(f"inconsistent dataset shapes {u.shape}, {g.shape}, {y.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(g)) and np.all(np.isfinite(y))):
            raise ConfigError("dataset contains non-finite values")

    def __len__(self):
        return self.fields.shape[0]

    def subset(self, idx, role):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.branch_inputs[idx], self.grid, self.fields[idx], role,
                       dict(self.task), self.oracle_tolerance)


def generate(spec: TaskSpec) -> Dataset:
    spec.validate()
    return {"antiderivative": gen_antiderivative, "heat1d": gen_heat1d,
            "proxy_field": gen_proxy_field}[spec.kind](spec)


# ---------------------------------------------------------------- antiderivative


def antiderivative_on_grid(u_fn, x, fine_points=10001):
    """Integrate ``u_fn`` from 0 to each ``x`` by composite trapezoid on a fine grid."""
    t = np.linspace(0.0, 1.0, fine_points)
    vals = np.asarray(u_fn(t), dtype=np.float64)
    cum = cumulative_trapezoid(vals, t, axis=-1, initial=0.0)
    if cum.ndim == 1:
        return np.interp(x, t, cum)
    return np.stack([np.interp(x, t, row) for row in cum])


def _fourier_coefficients(rng, n, n_modes, decay, offset_scale):
    k = np.arange(1, n_modes + 1)
    scale = 1.0 / k ** decay
    a0 = rng.normal(0.0, offset_scale, size=(n, 1))
    a = rng.normal(size=(n, n_modes)) * scale
    b = rng.normal(size=(n, n_modes)) * scale
    return a0, a, b, k


def gen_antiderivative(spec: TaskSpec) -> Dataset:
    ph = spec.physics
    rng = RngStream(spec.seed, 1).generator()
    a0, a, b, k = _fourier_coefficients(rng, spec.n_samples, int(ph["n_modes"]),
                                        ph["decay"], ph["offset_scale"])

    def u_fn(t):
        w = 2.0 * np.pi * np.multiply.outer(k, t)  # (K, len(t))
        return a0 + a @ np.cos(w) + b @ np.sin(w)

    t = np.linspace(0.0, 1.0, spec.steps)
    x = np.linspace(0.0, 1.0, spec.points)
    u = u_fn(t)[:, :, None]
    y = antiderivative_on_grid(u_fn, x, int(ph["fine_points"]))
    return Dataset(u, x[:, None], y, "all", spec.to_dict(), oracle_tolerance=1e-6)


# ---------------------------------------------------------------- heat equation


def solve_heat1d(boundary, kappa=0.1, length=1.0, t_final=1.0, nx=129, cfl=0.4):
    """Explicit FTCS for T_t = kappa T_xx on [0, length].

    ``boundary(t)`` gives the left-end temperature; it may return an array
    (one value per sample) for batched solves.  The right end is held at
    zero and the rod starts at zero.  Returns ``(x, T(x, t_final))``.
    """
    dx = length / (nx - 1)
    n_steps = max(1, math.ceil(t_final / (cfl * dx * dx / kappa)))
    dt = t_final / n_steps
    r = kappa * dt / (dx * dx)
    if r > 0.5:
        raise ConfigError(f"FTCS unstable: r = kappa*dt/dx^2 = {r:.4f} > 0.5")
    x = np.linspace(0.0, length, nx)
    left0 = np.asarray(boundary(0.0), dtype=np.float64)
    T = np.zeros(left0.shape + (nx,))
    for n in range(1, n_steps + 1):
        T[..., 1:-1] += r * (T[..., 2:] - 2.0 * T[..., 1:-1] + T[..., :-2])
        T[..., 0] = boundary(n * dt)
        T[..., -1] = 0.0
    return x, T


def gen_heat1d(spec: TaskSpec) -> Dataset:
    ph = spec.physics
    rng = RngStream(spec.seed, 2).generator()
    n_modes = int(ph["n_modes"])
    tf = float(ph["t_final"])
    amp = rng.normal(size=(spec.n_samples, n_modes)) / np.arange(1, n_modes + 1)
    ramp = rng.normal(0.0, ph["ramp_scale"], size=spec.n_samples)
    k = np.arange(1, n_modes + 1)

    # zero at t = 0 so the boundary is consistent with the initial state
    def boundary(t):
        t = np.asarray(t, dtype=np.float64)
        s = np.sin(np.pi * np.multiply.outer(t / tf, k))
        return s @ amp.T + np.multiply.outer(t / tf, ramp)

    t = np.linspace(0.0, tf, spec.steps)
    u = boundary(t).T[:, :, None]
    xs, T = solve_heat1d(boundary, ph["kappa"], ph["length"], tf, int(ph["nx"]), ph["cfl"])
    xq = np.linspace(0.0, ph["length"], spec.points)
    y = np.stack([np.interp(xq, xs, row) for row in T])
    return Dataset(u, xq[:, None], y, "all", spec.to_dict(), oracle_tolerance=1e-3)


# ---------------------------------------------------------------- proxy field


def proxy_basis(coords):
    """The two fixed spatial patterns for points in [-1, 1]^2."""
    x, y = coords[:, 0], coords[:, 1]
    f1 = np.exp(-((x - 0.3) ** 2 + (y + 0.2) ** 2) / 0.5)
    f2 = np.cos(np.pi * x) * np.sin(0.5 * np.pi * y)
    return f1, f2


def proxy_field_from_latent(w, coords, physics):
    """y(r) = a(w) f1(r) + b(w) f2(r) with affine a, b."""
    f1, f2 = proxy_basis(coords)
    w = np.asarray(w, dtype=np.float64)
    a = physics["a0"] + physics["a1"] * w
    b = physics["b0"] + physics["b1"] * w
    return np.multiply.outer(a, f1) + np.multiply.outer(b, f2)


def proxy_weights(steps):
    """Recency weights summing to one."""
    w = np.arange(1, steps + 1, dtype=np.float64)
    return w / w.sum()


def gen_proxy_field(spec: TaskSpec) -> Dataset:
    ph = spec.physics
    T, C, N = spec.steps, spec.channels, spec.n_samples
    fixed = RngStream(spec.seed, 3).generator()
    coords = fixed.uniform(-1.0, 1.0, size=(spec.points, 2))
    offsets = fixed.normal(0.0, 1.0, size=C)
    gains = fixed.uniform(0.5, 1.5, size=C) * fixed.choice([-1.0, 1.0], size=C)

    rng = RngStream(spec.seed, 4).generator()
    s = np.empty((N, T))
    s[:, 0] = rng.normal(size=N)
    innov = math.sqrt(1.0 - ph["ar"] ** 2)
    for t in range(1, T):
        s[:, t] = ph["ar"] * s[:, t - 1] + innov * rng.normal(size=N)
    w = s @ proxy_weights(T)
    noise = ph["noise"] * rng.normal(size=(N, T, C))
    u = offsets + gains * s[:, :, None] + noise
    y = proxy_field_from_latent(w, coords, ph)
    task = spec.to_dict()
    return Dataset(u, coords, y, "all", task, oracle_tolerance=1e-12)


# ---------------------------------------------------------------- splitting


def split_sizes(n, fractions):
    """Sizes for (train, calibration, test).

    Floats are fractions summing to one: train and calibration are floored
    and test takes the remainder.  Integers are absolute counts summing to n.
    """
    fr = list(fractions)
    if len(fr) != 3:
        raise ConfigError("need exactly three split fractions or counts")
    if all(isinstance(f, (int, np.integer)) and not isinstance(f, bool) for f in fr):
        sizes = [int(f) for f in fr]
        if sum(sizes) != n or min(sizes) < 0:
            raise ConfigError(f"split counts {sizes} do not add up to {n}")
    else:
        if min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions {fr} must be non-negative and sum to 1")
        a = math.floor(fr[0] * n + 1e-9)
        b = math.floor(fr[1] * n + 1e-9)
        sizes = [a, b, n - a - b]
    for role, s in zip(("train", "calibration", "test"), sizes):
        if s == 0:
            raise ConfigError(f"empty {role} split")
    return sizes


def split_dataset(data: Dataset, fractions=(0.8, 0.1, 0.1), seed=0):
    """Seeded disjoint split into train / calibration / test datasets."""
    sizes = split_sizes(len(data), fractions)
    perm = RngStream(seed, 5).generator().permutation(len(data))
    a, b = sizes[0], sizes[0] + sizes[1]
    return (data.subset(perm[:a], "train"), data.subset(perm[a:b], "calibration"),
            data.subset(perm[b:], "test"))
