"""Moments of generated samples, intervals, and replication metrics."""
import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.linalg import solve_triangular

from .errors import ConfigError, SingularityError

# Acklam's rational approximation to the normal inverse CDF
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


@dataclass
class SampleMoments:
    mean: np.ndarray
    cov: np.ndarray
    M: int


@dataclass
class IntervalEstimate:
    center: float
    lower: float
    upper: float
    level: float
    kind: str
    coordinate: int = 0
    degenerate: bool = False

    @property
    def half_width(self):
        return 0.5 * (self.upper - self.lower)

    def covers(self, value):
        return self.lower <= value <= self.upper


def sample_moments(samples):
    """Mean and unbiased (divisor M - 1) covariance of ``(M, d_y)`` samples."""
    s = np.asarray(samples, dtype=float)
    if s.ndim == 1:
        s = s.reshape(-1, 1)
    M = s.shape[0]
    if M < 2:
        raise ConfigError(f"need at least 2 samples for a covariance, got {M}")
    mean = s.mean(axis=0)
    c = s - mean
    cov = c.T @ c / (M - 1)
    return SampleMoments(mean, 0.5 * (cov + cov.T), M)


def _check_p(p):
    if not 0 < p < 1:
        raise ConfigError(f"probability must be in (0, 1), got {p}")


def normal_quantile(p):
    """Inverse standard normal CDF; rational start plus one Halley step."""
    _check_p(p)
    if p < _P_LOW:
        q = math.sqrt(-2 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1))
    elif p <= 1 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1))
    else:
        q = math.sqrt(-2 * math.log1p(-p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1))
    # Halley refinement against the erfc-based CDF
    if p <= 0.5:
        e = 0.5 * math.erfc(-x / math.sqrt(2)) - p
    else:
        e = (1 - p) - 0.5 * math.erfc(x / math.sqrt(2))
    u = e * math.sqrt(2 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1 + 0.5 * x * u)


def t_quantile(p, df):
    """Inverse CDF of Student's t with ``df`` degrees of freedom."""
    _check_p(p)
    if not df >= 1:
        raise ConfigError(f"degrees of freedom must be >= 1, got {df}")
    return float(special.stdtrit(df, p))


def _coordinate_sd(moments, coordinate):
    if not 0 <= coordinate < len(moments.mean):
        raise ConfigError(f"coordinate {coordinate} out of range")
    var = float(moments.cov[coordinate, coordinate])
    if var < 0:
        raise ConfigError(f"negative variance {var}")
    return math.sqrt(var)


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")


def confidence_interval(moments, alpha, coordinate=0):
    """``mean +- z_{alpha/2} S / sqrt(M)`` for the regression function."""
    _check_alpha(alpha)
    if moments.M < 2:
        raise ConfigError("confidence interval needs M >= 2")
    sd = _coordinate_sd(moments, coordinate)
    c = float(moments.mean[coordinate])
    hw = normal_quantile(1 - alpha / 2) * sd / math.sqrt(moments.M)
    return IntervalEstimate(c, c - hw, c + hw, 1 - alpha, "confidence", coordinate, sd == 0)


def prediction_interval(moments, alpha, coordinate=0):
    """``mean +- t_{alpha/2}(M - 1) S sqrt(1 + 1/M)`` for a new response."""
    _check_alpha(alpha)
    if moments.M < 2:
        raise ConfigError("prediction interval needs M >= 2")
    sd = _coordinate_sd(moments, coordinate)
    c = float(moments.mean[coordinate])
    hw = t_quantile(1 - alpha / 2, moments.M - 1) * sd * math.sqrt(1 + 1 / moments.M)
    return IntervalEstimate(c, c - hw, c + hw, 1 - alpha, "prediction", coordinate, sd == 0)


def studentized_stat(moments, truth):
    """``sqrt(M) L^{-1} (mean - truth)`` with ``L`` the lower Cholesky factor of cov."""
    truth = np.asarray(truth, dtype=float).reshape(-1)
    diff = moments.mean - truth
    if diff.shape[0] == 1:
        var = float(moments.cov[0, 0])
        if not var > 0:
            raise SingularityError("zero sample variance")
        return np.array([math.sqrt(moments.M) * diff[0] / math.sqrt(var)])
    try:
        L = np.linalg.cholesky(moments.cov)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("sample covariance is not positive definite") from exc
    return math.sqrt(moments.M) * solve_triangular(L, diff, lower=True)


def coverage_probability(stats, alpha):
    """Fraction of statistics inside the closed band ``[-z_{alpha/2}, z_{alpha/2}]``."""
    _check_alpha(alpha)
    s = np.asarray(stats, dtype=float).reshape(-1)
    if s.size == 0:
        raise ConfigError("no statistics supplied")
    z = normal_quantile(1 - alpha / 2)
    return float(np.mean(np.abs(s) <= z))


def mse_bias_variance(estimates, truth):
    """``(MSE, Variance, Bias^2)`` with divisor equal to the number of estimates."""
    e = np.asarray(estimates, dtype=float).reshape(-1)
    if e.size == 0:
        raise ConfigError("no estimates supplied")
    center = e.mean()
    mse = float(np.mean((e - truth) ** 2))
    var = float(np.mean((e - center) ** 2))
    bias2 = float((center - truth) ** 2)
    return mse, var, bias2


INTERVAL_COLUMNS = ["point_id", "coordinate", "kind", "level", "center", "lower", "upper",
                    "covered"]


def intervals_csv(rows):
    """``rows`` are ``(point_id, IntervalEstimate, truth_or_None)`` triples."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(INTERVAL_COLUMNS)
    for pid, iv, truth in rows:
        covered = "" if truth is None else int(iv.covers(truth))
        w.writerow([pid, iv.coordinate, iv.kind, repr(iv.level), repr(iv.center),
                    repr(iv.lower), repr(iv.upper), covered])
    return buf.getvalue()
