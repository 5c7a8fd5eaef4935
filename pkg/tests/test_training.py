import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from diffinfer.dataset import Dataset
from diffinfer.errors import ConfigError
from diffinfer.oracles import GaussianParams, gaussian_drift
from diffinfer.training import (Standardization, TrainConfig, TrainedModel, evaluate_drift_mse,
                                loss_trace_csv, sample_time_noise, train)


def _gauss_data(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(np.zeros((n, 0)), 0.5 + rng.standard_normal(n))


def test_sample_time_noise():
    a = sample_time_noise(3, 0.01, 3.0, 1, np.random.default_rng(5))
    b = sample_time_noise(3, 0.01, 3.0, 1, np.random.default_rng(5))
    assert_array_equal(a.t, b.t)
    assert_array_equal(a.z, b.z)
    m = 10**5
    big = sample_time_noise(m, 0.01, 3.0, 2, np.random.default_rng(0))
    assert np.all((big.t >= 0.01) & (big.t <= 3.0))
    assert abs(big.t.mean() - 1.505) < 4 * 2.99 / np.sqrt(12 * m)
    assert big.z.shape == (m, 2)
    with pytest.raises(ConfigError):
        sample_time_noise(0, 0.01, 3.0, 1, np.random.default_rng(0))


def test_config_guards():
    with pytest.raises(ConfigError):
        TrainConfig(m=0)
    with pytest.raises(ConfigError):
        TrainConfig(T0=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(lr_schedule="step")
    with pytest.raises(ConfigError):
        train(Dataset(np.zeros((0, 1)), np.zeros(0)), TrainConfig())


def test_standardization_constant_column():
    X = np.column_stack([np.ones(5), np.arange(5.0)])
    s = Standardization.fit(X, np.arange(5.0).reshape(-1, 1))
    assert_allclose(s.x_scale[0], 1.0)
    assert_allclose(s.y_inverse(s.y([[3.0]])), [[3.0]])
    back = Standardization.from_dict(json.loads(json.dumps(s.to_dict())))
    assert_allclose(back.x_shift, s.x_shift)


def test_loss_decreases():
    model = train(_gauss_data(), TrainConfig(epochs=100, val_fraction=0.0))
    trace = [row[1] for row in model.loss_trace]
    assert len(trace) == 100
    assert trace[-1] < trace[0]


def test_training_is_deterministic():
    cfg = TrainConfig(epochs=5, hidden_dims=(16, 16), seed=11)
    a = train(_gauss_data(300), cfg)
    b = train(_gauss_data(300), cfg)
    for p, q in zip(a.net.params, b.net.params):
        assert_array_equal(p, q)
    assert a.loss_trace == b.loss_trace


def test_validation_loss_recorded():
    model = train(_gauss_data(200), TrainConfig(epochs=3, hidden_dims=(8,), val_fraction=0.2))
    assert all(row[2] is not None and np.isfinite(row[2]) for row in model.loss_trace)
    csv = loss_trace_csv(model.loss_trace)
    assert csv.splitlines()[0] == "epoch,train_loss,val_loss"
    assert len(csv.splitlines()) == 4


def test_early_stopping_stops():
    # a frozen network never improves, so training halts after 1 + patience epochs
    cfg = TrainConfig(epochs=200, hidden_dims=(8,), val_fraction=0.2, early_stopping=True,
                      patience=2, lr=1e-300, ema_decay=0.0)
    model = train(_gauss_data(200), cfg)
    assert len(model.loss_trace) == 3


def test_model_round_trip():
    model = train(_gauss_data(100), TrainConfig(epochs=2, hidden_dims=(8,)))
    back = TrainedModel.from_dict(json.loads(json.dumps(model.to_dict())))
    y = np.linspace(-2, 2, 7).reshape(-1, 1)
    assert_array_equal(back.drift(0.5, y, np.zeros(0)), model.drift(0.5, y, np.zeros(0)))


def test_evaluate_drift_mse_stubs():
    f = lambda t, y, x: -y
    t = np.linspace(0.1, 2, 5)
    y = np.linspace(-2, 2, 11)
    assert evaluate_drift_mse(f, f, t, y, None) == 0.0
    g = lambda t, y, x: -y + 0.3
    assert_allclose(evaluate_drift_mse(g, f, t, y, None), 0.09)


def test_trained_beats_untrained_on_gaussian():
    # N(0, 1) data standardizes to itself, so the oracle drift is -y
    rng = np.random.default_rng(4)
    y = rng.standard_normal(2000)
    y = (y - y.mean()) / y.std()
    ds = Dataset(np.zeros((2000, 0)), y)
    oracle = lambda t, yy, x: gaussian_drift(GaussianParams.scalar(0.0, 1.0), t, yy)
    tg, yg = np.linspace(0.05, 3, 12), np.linspace(-2.5, 2.5, 41)
    w = lambda t, yy: np.exp(-0.5 * yy[:, 0] ** 2)
    before = train(ds, TrainConfig(epochs=1, lr=1e-12, ema_decay=0.0, val_fraction=0.0))
    after = train(ds, TrainConfig(epochs=60, val_fraction=0.0))
    e0 = evaluate_drift_mse(before.drift, oracle, tg, yg, np.zeros(0), w)
    e1 = evaluate_drift_mse(after.drift, oracle, tg, yg, np.zeros(0), w)
    assert e1 < e0
    assert e1 < 0.05


def test_point_mass_drift_converges():
    # constant Y standardizes to 0, whose diffused law has drift y - 2y / (1 - e^{-2t})
    ds = Dataset(np.zeros((200, 0)), np.full(200, 1.7))
    exact = lambda t, y, x: y - 2 * y / -np.expm1(-2 * t)
    tg, yg = np.linspace(1.0, 3.0, 9), np.linspace(-2, 2, 21)
    errs = []
    for epochs in (1, 10, 100):
        model = train(ds, TrainConfig(epochs=epochs, val_fraction=0.0))
        errs.append(evaluate_drift_mse(model.drift, exact, tg, yg, np.zeros(0)))
    assert errs[0] > errs[1] > errs[2]
