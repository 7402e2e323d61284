import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmco import tasks
from cmco.errors import ConfigError
from cmco.nn import RngStream
from cmco.tasks import TaskSpec


# ---------------------------------------------------------------- antiderivative


def test_antiderivative_of_one_is_identity():
    x = np.linspace(0, 1, 17)
    np.testing.assert_allclose(tasks.antiderivative_on_grid(lambda t: np.ones_like(t), x), x,
                               rtol=0, atol=1e-14)


def test_antiderivative_of_zero():
    x = np.linspace(0, 1, 9)
    assert np.all(tasks.antiderivative_on_grid(lambda t: np.zeros_like(t), x) == 0.0)


def test_antiderivative_of_cosine():
    x = np.linspace(0, 1, 101)
    y = tasks.antiderivative_on_grid(lambda t: np.cos(2 * np.pi * t), x)
    assert np.max(np.abs(y - np.sin(2 * np.pi * x) / (2 * np.pi))) < 1e-6


def test_antiderivative_dataset_matches_closed_form():
    spec = TaskSpec("antiderivative", n_samples=5, steps=16, points=21, seed=3)
    d = tasks.generate(spec)
    assert d.branch_inputs.shape == (5, 16, 1)
    assert d.grid.shape == (21, 1)
    # the series integrates term by term; recover it from the stream the generator uses
    rng = RngStream(3, 1).generator()
    ph = spec.physics
    K = ph["n_modes"]
    a0 = rng.normal(0.0, ph["offset_scale"], size=(5, 1))
    a = rng.normal(size=(5, K)) / np.arange(1, K + 1)
    b = rng.normal(size=(5, K)) / np.arange(1, K + 1)
    x = d.grid[:, 0]
    for i in range(5):
        exact = a0[i, 0] * x
        for k in range(1, K + 1):
            w = 2 * math.pi * k
            exact = exact + a[i, k - 1] * np.sin(w * x) / w + b[i, k - 1] * (1 - np.cos(w * x)) / w
        assert np.max(np.abs(d.fields[i] - exact)) < d.oracle_tolerance


# ---------------------------------------------------------------- heat


def test_heat_zero_boundary_gives_zero_field():
    _, T = tasks.solve_heat1d(lambda t: 0.0 * np.asarray(t), nx=33)
    assert np.all(T == 0.0)


def test_heat_reaches_linear_steady_state():
    x, T = tasks.solve_heat1d(lambda t: np.where(np.asarray(t) > 0, 1.0, 0.0), kappa=1.0,
                              length=1.0, t_final=5.0, nx=33)
    assert np.max(np.abs(T - (1 - x))) < 0.01


def test_heat_grid_convergence():
    def boundary(t):
        return np.sin(np.pi * np.asarray(t)) + 0.5 * np.asarray(t)

    x1, T1 = tasks.solve_heat1d(boundary, nx=129)
    x2, T2 = tasks.solve_heat1d(boundary, nx=257)
    np.testing.assert_array_equal(x2[::2], x1)
    assert np.max(np.abs(T2[::2] - T1)) < 1e-3


def test_heat_instability_names_r():
    with pytest.raises(ConfigError, match="r = "):
        tasks.solve_heat1d(lambda t: 0.0, cfl=0.6, nx=17)


def test_heat_dataset_shapes_and_boundary():
    d = tasks.generate(TaskSpec("heat1d", n_samples=4, steps=10, points=15, seed=1))
    assert d.branch_inputs.shape == (4, 10, 1)
    assert d.fields.shape == (4, 15)
    np.testing.assert_allclose(d.branch_inputs[:, 0, 0], 0.0, atol=1e-15)
    # the left end of the field is the final boundary value
    np.testing.assert_allclose(d.fields[:, 0], d.branch_inputs[:, -1, 0], atol=1e-12)
    np.testing.assert_allclose(d.fields[:, -1], 0.0, atol=1e-15)


# ---------------------------------------------------------------- proxy field


def test_proxy_zero_latent_is_base_pattern():
    coords = np.random.default_rng(0).uniform(-1, 1, size=(20, 2))
    ph = TaskSpec("proxy_field").physics
    f1, f2 = tasks.proxy_basis(coords)
    y = tasks.proxy_field_from_latent(np.zeros(1), coords, ph)
    np.testing.assert_array_equal(y[0], ph["a0"] * f1 + ph["b0"] * f2)


def test_proxy_equal_latent_gives_identical_fields():
    coords = np.random.default_rng(1).uniform(-1, 1, size=(30, 2))
    ph = TaskSpec("proxy_field").physics
    y = tasks.proxy_field_from_latent(np.array([0.37, -1.2, 0.37]), coords, ph)
    assert np.array_equal(y[0], y[2])
    assert not np.array_equal(y[0], y[1])


def test_proxy_dataset_matches_closed_form_loop():
    spec = TaskSpec("proxy_field", n_samples=6, steps=7, channels=12, points=40, seed=2,
                    physics={"noise": 0.0})
    d = tasks.generate(spec)
    assert d.branch_inputs.shape == (6, 7, 12)
    assert np.all(np.abs(d.grid) <= 1.0)
    ph = spec.physics
    fixed = RngStream(2, 3).generator()
    fixed.uniform(-1.0, 1.0, size=(40, 2))
    offsets = fixed.normal(0.0, 1.0, size=12)
    gains = fixed.uniform(0.5, 1.5, size=12) * fixed.choice([-1.0, 1.0], size=12)
    for i in range(6):
        s = (d.branch_inputs[i, :, 0] - offsets[0]) / gains[0]
        w = sum((t + 1) * s[t] for t in range(7)) / 28.0
        for j in range(40):
            x, y = d.grid[j]
            f1 = math.exp(-((x - 0.3) ** 2 + (y + 0.2) ** 2) / 0.5)
            f2 = math.cos(math.pi * x) * math.sin(0.5 * math.pi * y)
            expected = (ph["a0"] + ph["a1"] * w) * f1 + (ph["b0"] + ph["b1"] * w) * f2
            assert abs(d.fields[i, j] - expected) < 1e-12


def test_proxy_weights_sum_to_one():
    assert math.isclose(tasks.proxy_weights(7).sum(), 1.0)


# ---------------------------------------------------------------- generic


@pytest.mark.parametrize("kind", tasks.TASK_KINDS)
def test_generators_are_seed_deterministic(kind):
    a = tasks.generate(TaskSpec(kind, n_samples=3, steps=7, points=9, seed=4))
    b = tasks.generate(TaskSpec(kind, n_samples=3, steps=7, points=9, seed=4))
    c = tasks.generate(TaskSpec(kind, n_samples=3, steps=7, points=9, seed=5))
    assert np.array_equal(a.fields, b.fields) and np.array_equal(a.branch_inputs, b.branch_inputs)
    assert not np.array_equal(a.fields, c.fields)


def test_invalid_specs():
    with pytest.raises(ConfigError):
        TaskSpec("navier_stokes")
    with pytest.raises(ConfigError):
        tasks.generate(TaskSpec("antiderivative", channels=2))
    with pytest.raises(ConfigError):
        tasks.generate(TaskSpec("heat1d", n_samples=0))


def test_dataset_rejects_bad_arrays():
    with pytest.raises(ConfigError):
        tasks.Dataset(np.zeros((3, 4, 1)), np.zeros((5, 1)), np.zeros((2, 5)))
    with pytest.raises(ConfigError):
        tasks.Dataset(np.zeros((2, 4, 1)), np.zeros((5, 1)), np.full((2, 5), np.nan))
    with pytest.raises(ConfigError):
        tasks.Dataset(np.zeros((2, 4, 1)), np.zeros((5, 1)), np.zeros((2, 5)), role="validation")


# ---------------------------------------------------------------- splitting


def test_split_sizes_examples():
    assert tasks.split_sizes(10, (0.8, 0.1, 0.1)) == [8, 1, 1]
    assert tasks.split_sizes(4937, (0.8, 0.1, 0.1)) == [3949, 493, 495]
    assert tasks.split_sizes(1000, (0.6, 0.2, 0.2)) == [600, 200, 200]
    assert tasks.split_sizes(14404, (11920, 2384, 100)) == [11920, 2384, 100]


@pytest.mark.parametrize("bad", [(1.0, 0.0, 0.0), (0.5, 0.5, 0.1), (0.5, 0.5), (8, 1, 2)])
def test_split_errors(bad):
    with pytest.raises(ConfigError):
        tasks.split_sizes(10, bad)


@settings(max_examples=40, deadline=None)
@given(st.integers(10, 300), st.integers(0, 1000))
def test_split_is_disjoint_exhaustive_and_seeded(n, seed):
    d = tasks.Dataset(np.arange(n, dtype=float).reshape(n, 1, 1), np.zeros((1, 1)),
                      np.arange(n, dtype=float).reshape(n, 1))
    parts = tasks.split_dataset(d, (0.6, 0.2, 0.2), seed)
    again = tasks.split_dataset(d, (0.6, 0.2, 0.2), seed)
    ids = [p.fields[:, 0].astype(int) for p in parts]
    assert [p.role for p in parts] == ["train", "calibration", "test"]
    assert sorted(np.concatenate(ids).tolist()) == list(range(n))
    assert all(np.array_equal(p.fields, q.fields) for p, q in zip(parts, again))
    assert [len(p) for p in parts] == tasks.split_sizes(n, (0.6, 0.2, 0.2))
