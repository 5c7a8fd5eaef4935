import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from diffinfer.errors import ConfigError, SingularityError
from diffinfer.inference import (SampleMoments, confidence_interval, coverage_probability,
                                 intervals_csv, mse_bias_variance, normal_quantile,
                                 prediction_interval, sample_moments, studentized_stat,
                                 t_quantile)


def _moments(mean, var, M):
    return SampleMoments(np.array([mean]), np.array([[var]]), M)


def test_sample_moments():
    m = sample_moments(np.array([[0.0], [2.0]]))
    assert_allclose(m.mean, [1.0])
    assert_allclose(m.cov, [[2.0]])
    c = sample_moments(np.full((5, 2), 3.0))
    assert_allclose(c.cov, 0.0)
    rng = np.random.default_rng(0)
    s = rng.normal(size=(30, 3))
    a, b = sample_moments(s), sample_moments(s[rng.permutation(30)])
    assert_allclose(a.mean, b.mean, rtol=1e-14)
    assert_allclose(a.cov, b.cov, rtol=1e-13)
    with pytest.raises(ConfigError):
        sample_moments(np.zeros((1, 1)))


def test_normal_quantile_values():
    assert abs(normal_quantile(0.5)) < 1e-15
    assert_allclose(normal_quantile(0.975), 1.959963984540054, rtol=1e-13)
    for p in [1e-10, 0.001, 0.02425, 0.1, 0.7, 0.99, 1 - 1e-9]:
        assert_allclose(normal_quantile(p), stats.norm.ppf(p), rtol=1e-12)
    with pytest.raises(ConfigError):
        normal_quantile(1.0)


def test_t_quantile_values():
    assert_allclose(t_quantile(0.975, 99), 1.9842169515086827, rtol=1e-10)
    with pytest.raises(ConfigError):
        t_quantile(0.975, 0)


def test_confidence_interval():
    ci = confidence_interval(_moments(0.5, 1.0, 100), 0.05)
    assert_allclose([ci.lower, ci.upper], [0.3040036015459946, 0.6959963984540054], rtol=1e-12)
    assert_allclose(confidence_interval(_moments(0.0, 1.0, 100), 0.32).half_width,
                    0.0994457883209753, rtol=1e-10)
    d = confidence_interval(_moments(2.0, 0.0, 100), 0.05)
    assert d.degenerate and d.lower == d.upper == 2.0


def test_prediction_interval():
    pi = prediction_interval(_moments(0.0, 1.0, 100), 0.05)
    assert_allclose(pi.half_width, 1.9941133567981922, rtol=1e-10)
    assert prediction_interval(_moments(1.0, 0.0, 10), 0.05).degenerate
    big = prediction_interval(_moments(0.0, 1.0, 10**6), 0.05)
    assert_allclose(big.half_width, 1.95997, atol=1e-5)
    with pytest.raises(ConfigError):
        prediction_interval(_moments(0.0, 1.0, 1), 0.05)


def test_studentized_stat():
    assert_allclose(studentized_stat(_moments(0.5, 1.0, 100), 0.3), [2.0])
    assert_allclose(studentized_stat(sample_moments(np.array([0.0, 2.0])), 1.0), [0.0])
    with pytest.raises(SingularityError):
        studentized_stat(_moments(0.5, 0.0, 10), 0.3)


def test_studentized_stat_multivariate_whitening():
    rng = np.random.default_rng(1)
    s = rng.multivariate_normal([1.0, -1.0], [[2.0, 0.5], [0.5, 1.0]], size=50)
    m = sample_moments(s)
    T = studentized_stat(m, [0.5, 0.0])
    L = np.linalg.cholesky(m.cov)
    assert_allclose(L @ T / np.sqrt(50), m.mean - [0.5, 0.0], rtol=1e-12)


def test_coverage_probability():
    assert coverage_probability(np.zeros(10), 0.05) == 1.0
    assert coverage_probability([0.0, 3.0], 0.05) == 0.5
    z = np.random.default_rng(2).standard_normal(10**5)
    assert abs(coverage_probability(z, 0.05) - 0.95) < 0.003


def test_mse_bias_variance():
    assert mse_bias_variance([2.0, 2.0], 2.0) == (0.0, 0.0, 0.0)
    assert_allclose(mse_bias_variance([0.0, 2.0], 1.0), (1.0, 1.0, 0.0))
    assert_allclose(mse_bias_variance([1.0, 1.0], 0.0), (1.0, 0.0, 1.0))


def test_intervals_csv():
    ci = confidence_interval(_moments(0.5, 1.0, 100), 0.05)
    text = intervals_csv([(0, ci, 0.4), (1, ci, None)])
    lines = text.splitlines()
    assert lines[0] == "point_id,coordinate,kind,level,center,lower,upper,covered"
    assert lines[1].endswith(",1") and lines[2].endswith(",")
