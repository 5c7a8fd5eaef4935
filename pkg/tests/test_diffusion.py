import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from diffinfer.diffusion import (EPS_VAR, TimeNoisePair, TimeNoisePairs, dsm_target,
                                 empirical_loss, make_schedule, ou_coefficients, perturb)
from diffinfer.errors import ConfigError
from diffinfer.nn import init_network

LN2 = math.log(2)


def test_ou_coefficients_values():
    assert ou_coefficients(0.0) == (1.0, EPS_VAR)
    assert_allclose(ou_coefficients(LN2), (0.5, 0.75), rtol=1e-15)
    mu, s2 = ou_coefficients(50.0)
    assert mu < 1e-15 and abs(s2 - 1) < 1e-15
    with pytest.raises(ConfigError):
        ou_coefficients(-0.1)


def test_ou_coefficients_vector():
    mu, s2 = ou_coefficients(np.array([0.0, LN2]))
    assert_allclose(mu, [1.0, 0.5])
    assert_allclose(s2, [EPS_VAR, 0.75])


def test_perturb_values():
    assert_allclose(perturb(np.array([1.0]), LN2, np.array([0.0])), [0.5])
    assert_allclose(perturb(np.array([0.0]), LN2, np.array([1.0])), [0.8660254037844386])
    z = np.random.default_rng(0).normal(size=3)
    y0 = np.array([1.0, -2.0, 0.5])
    assert np.max(np.abs(perturb(y0, 0.0, z) - y0)) < 1e-4


def test_dsm_target_values():
    assert_allclose(dsm_target(np.array([1.0]), LN2, np.array([0.0])), [0.5])
    # -1.25 / sqrt(0.75)
    assert_allclose(dsm_target(np.array([0.0]), LN2, np.array([1.0])), [-1.4433756729740644])


def test_dsm_target_identity():
    rng = np.random.default_rng(1)
    y0 = rng.normal(size=(50, 2))
    z = rng.normal(size=(50, 2))
    t = rng.uniform(0.01, 3, 50)
    s = np.sqrt(-np.expm1(-2 * t))[:, None]
    assert_allclose(dsm_target(y0, t, z), perturb(y0, t, z) - 2 * z / s, rtol=1e-12, atol=1e-12)


def test_dsm_target_guards():
    with pytest.raises(ConfigError):
        dsm_target(np.zeros(1), 0.0, np.zeros(1))
    with pytest.raises(ConfigError):
        dsm_target(np.zeros(1), 0.005, np.zeros(1), T0=0.01)


def _oracle_target(Y, pairs):
    return [dsm_target(Y, p.t, np.broadcast_to(p.z, Y.shape)) for p in pairs]


def test_empirical_loss_zero_for_perfect_stub():
    # with one data row the target is a function of (t, y_t)
    y0 = np.array([[0.7]])
    pairs = TimeNoisePairs([0.3, 1.2], [[0.4], [-1.0]])

    def stub(t, y, x):
        mu, s2 = ou_coefficients(t)
        z = (y - mu[:, None] * y0) / np.sqrt(s2)[:, None]
        return dsm_target(y0, t, z)

    assert empirical_loss(stub, np.zeros((1, 1)), y0, pairs) < 1e-24


def test_empirical_loss_single_term():
    y0 = np.array([[0.5]])
    pair = TimeNoisePair(0.4, np.array([1.3]))
    target = dsm_target(y0, 0.4, np.array([[1.3]]))
    loss = empirical_loss(lambda t, y, x: np.zeros_like(y), np.zeros((1, 0)), y0, [pair])
    assert_allclose(loss, float(np.sum(target ** 2)), rtol=1e-14)


def test_empirical_loss_permutation_invariant():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(20, 2))
    Y = rng.normal(size=(20, 1))
    pairs = TimeNoisePairs(rng.uniform(0.01, 3, 5), rng.normal(size=(5, 1)))
    net = init_network([4, 8, 1], 0)
    perm = rng.permutation(20)
    a = empirical_loss(net, X, Y, pairs)
    b = empirical_loss(net, X[perm], Y[perm], pairs)
    assert abs(a - b) <= 1e-12 * abs(a)


def test_schedule_uniform():
    s = make_schedule(0.01, 1.01, 2)
    assert_allclose(s.grid, [0.0, 0.5, 1.0])
    assert_allclose(s.drift_times, [1.01, 0.51])
    s1 = make_schedule(0.01, 3.0, 1)
    assert_allclose(s1.grid, [0.0, 2.99])


def test_schedule_geometric_refines_near_data():
    g = make_schedule(0.01, 3.0, 100, "geometric")
    u = make_schedule(0.01, 3.0, 100)
    assert g.grid[0] == 0.0 and g.grid[-1] == 3.0 - 0.01
    # the final tenth of the reverse steps runs closest to t = T0
    assert np.max(g.steps[-10:]) <= u.steps[0]
    assert np.all(np.diff(g.drift_times) < 0)


def test_schedule_rejects_bad_args():
    with pytest.raises(ConfigError):
        make_schedule(0.0, 1.0, 10)
    with pytest.raises(ConfigError):
        make_schedule(0.1, 1.0, 0)
    with pytest.raises(ConfigError):
        make_schedule(0.1, 1.0, 10, "cubic")
