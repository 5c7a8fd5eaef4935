import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from diffinfer.dataset import Dataset
from diffinfer.diffusion import make_schedule
from diffinfer.errors import ConfigError, DivergenceError, ShapeError
from diffinfer.oracles import GaussianParams, gaussian_drift, ks_distance
from diffinfer.sampler import em_step, generate, path_rng, sample_one, samples_csv
from diffinfer.training import TrainConfig, train


def test_em_step_values():
    y = np.array([1.5])
    assert_array_equal(em_step(np.zeros(1), y, 0.1, np.zeros(1)), y)
    assert_allclose(em_step(np.array([2.0]), y, 0.1, np.zeros(1)), [1.7])
    assert_allclose(em_step(np.zeros(1), y, 0.5, np.ones(1)), [2.5])
    with pytest.raises(ConfigError):
        em_step(np.zeros(1), y, 0.0, np.zeros(1))
    with pytest.raises(ShapeError):
        em_step(np.zeros(2), y, 0.1, np.zeros(1))


def test_zero_dynamics_returns_prior_draw():
    sched = make_schedule(0.01, 1.0, 10)
    out = sample_one(lambda t, y, x: np.zeros_like(y), None, sched, np.random.default_rng(3),
                     d_y=2, noise=False)
    assert_array_equal(out, np.random.default_rng(3).standard_normal(2))


def test_sample_one_repeatable():
    sched = make_schedule(0.01, 2.0, 50)
    f = lambda t, y, x: -y
    a = sample_one(f, None, sched, np.random.default_rng(9), d_y=1)
    b = sample_one(f, None, sched, np.random.default_rng(9), d_y=1)
    assert_array_equal(a, b)


def test_generate_single_path_matches_sample_one():
    sched = make_schedule(0.01, 2.0, 40)
    f = lambda t, y, x: -0.5 * y + 0.1
    key = 1234
    g = generate(f, None, sched, 1, key, d_y=1)
    s = sample_one(f, None, sched, path_rng(key, 0), d_y=1)
    assert_array_equal(g[0], s)


def test_generate_repeatable_and_chunk_free():
    sched = make_schedule(0.01, 2.0, 30)
    f = lambda t, y, x: -y
    a = generate(f, None, sched, 100, 77, d_y=1)
    b = generate(f, None, sched, 100, 77, d_y=1)
    assert_array_equal(a, b)
    # a prefix of paths does not depend on how many paths are requested
    assert_array_equal(generate(f, None, sched, 10, 77, d_y=1), a[:10])


def test_oracle_gaussian_calibration():
    sched = make_schedule(0.01, 5.0, 500)
    target = GaussianParams.scalar(0.0, 1.0)
    s = generate(lambda t, y, x: gaussian_drift(target, t, y), None, sched, 20000, 0, d_y=1)
    assert ks_distance(s, stats.norm.cdf) < 0.02


def test_divergence_reported():
    sched = make_schedule(0.01, 3.0, 100)
    with pytest.raises(DivergenceError) as info:
        generate(lambda t, y, x: 50 * y, None, sched, 5, 0, d_y=1)
    assert info.value.step is not None


def test_generate_trained_model_shapes_and_guards():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(200, 2))
    ds = Dataset(X, X.sum(axis=1) + 0.1 * rng.standard_normal(200))
    model = train(ds, TrainConfig(epochs=3, hidden_dims=(8,), T=2.0))
    out = generate(model, [0.5, 0.5], make_schedule(0.01, 2.0, 20), 7, 1)
    assert out.shape == (7, 1) and np.all(np.isfinite(out))
    with pytest.raises(ConfigError):
        generate(model, [0.5, 0.5], make_schedule(0.01, 3.0, 20), 7, 1)
    with pytest.raises(ShapeError):
        generate(model, [0.5], make_schedule(0.01, 2.0, 20), 7, 1)
    with pytest.raises(ConfigError):
        generate(model, [0.5, 0.5], make_schedule(0.01, 2.0, 20), 0, 1)


def test_samples_csv():
    text = samples_csv(np.array([[1.0], [2.5]]))
    assert text == "y1\n1.0\n2.5\n"
