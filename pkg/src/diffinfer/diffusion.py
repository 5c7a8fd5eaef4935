"""Ornstein-Uhlenbeck forward process and the denoising score-matching loss.

Forward noising is ``dY = -Y dt + sqrt(2) dB`` so that
``Y_t | Y_0 ~ N(e^{-t} Y_0, (1 - e^{-2t}) I)``. The network regresses the
reverse-time drift ``b(t, y, x) = y + 2 grad_y log p_t(y | x)``.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

EPS_VAR = 1e-10


def ou_coefficients(t, eps_var=EPS_VAR):
    """Return ``(e^{-t}, max(1 - e^{-2t}, eps_var))``; works elementwise."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ConfigError(f"diffusion time must be >= 0, got {t}")
    mu = np.exp(-t_arr)
    sigma2 = np.maximum(-np.expm1(-2.0 * t_arr), eps_var)
    if np.ndim(t) == 0:
        return float(mu), float(sigma2)
    return mu, sigma2


def _time_column(t, n):
    t = np.asarray(t, dtype=float)
    return t.reshape(-1, 1) if t.ndim else t


def perturb(y0, t, z, eps_var=EPS_VAR):
    """Sample of ``Y_t`` given ``Y_0 = y0`` driven by standard normal ``z``."""
    y0 = np.asarray(y0, dtype=float)
    z = np.asarray(z, dtype=float)
    if y0.shape != z.shape:
        raise ShapeError(f"y0 {y0.shape} and z {z.shape} differ")
    mu, s2 = ou_coefficients(t, eps_var)
    mu, s2 = _time_column(mu, len(y0)), _time_column(s2, len(y0))
    return mu * y0 + np.sqrt(s2) * z


def dsm_target(y0, t, z, T0=None):
    """Regression target ``e^{-t} y0 - (1 + e^{-2t}) z / sqrt(1 - e^{-2t})``.

    This equals ``perturb(y0, t, z) - 2 z / sqrt(1 - e^{-2t})``. Singular at
    ``t = 0``, so times below ``T0`` (or non-positive times) are rejected.
    """
    y0 = np.asarray(y0, dtype=float)
    z = np.asarray(z, dtype=float)
    if y0.shape != z.shape:
        raise ShapeError(f"y0 {y0.shape} and z {z.shape} differ")
    t_arr = np.asarray(t, dtype=float)
    floor = 0.0 if T0 is None else T0
    if np.any(t_arr < floor) or np.any(t_arr <= 0):
        raise ConfigError(f"score-matching target needs t >= T0 > 0, got t={t}")
    mu, s2 = ou_coefficients(t)
    mu, s2 = _time_column(mu, len(y0)), _time_column(s2, len(y0))
    return mu * y0 - (1.0 + mu * mu) * z / np.sqrt(s2)


@dataclass(frozen=True)
class TimeNoisePair:
    t: float
    z: np.ndarray


class TimeNoisePairs:
    """The ``m`` shared draws ``(t_j, Z_j)``, stored as arrays.

    Indexing and iteration yield :class:`TimeNoisePair` items.
    """

    def __init__(self, t, z):
        self.t = np.asarray(t, dtype=float).reshape(-1)
        self.z = np.asarray(z, dtype=float)
        if self.z.ndim == 1:
            self.z = self.z.reshape(-1, 1)
        if self.z.shape[0] != self.t.shape[0]:
            raise ShapeError("t and z must have the same number of rows")

    @classmethod
    def from_list(cls, pairs):
        pairs = list(pairs)
        return cls([p.t for p in pairs], np.stack([np.atleast_1d(p.z) for p in pairs]))

    def __len__(self):
        return self.t.shape[0]

    def __getitem__(self, j):
        return TimeNoisePair(float(self.t[j]), self.z[j])

    def __iter__(self):
        return (self[j] for j in range(len(self)))


def _as_pairs(pairs):
    return pairs if isinstance(pairs, TimeNoisePairs) else TimeNoisePairs.from_list(pairs)


def empirical_loss(drift, X, Y, pairs, T0=None):
    """Double-sum loss ``(1/mn) sum_j sum_i ||s(t_j, Y_{t_j,i}, x_i) - target_{ij}||^2``.

    ``drift`` is either a :class:`~diffinfer.nn.ScoreNetwork` or a callable
    ``f(t, y, x)`` taking a time vector and ``(n, d)`` arrays.
    """
    from .nn import ScoreNetwork, drift as net_drift

    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    if X.ndim == 1:
        X = X.reshape(len(Y), -1)
    pairs = _as_pairs(pairs)
    if len(Y) == 0 or len(pairs) == 0:
        raise ConfigError("empirical loss needs a non-empty dataset and pairs")
    if isinstance(drift, ScoreNetwork):
        fn = lambda t, y, x: net_drift(drift, t, y, x)
    else:
        fn = drift
    n = len(Y)
    terms = []
    for pair in pairs:
        z = np.broadcast_to(pair.z, Y.shape)
        yt = perturb(Y, pair.t, z)
        target = dsm_target(Y, pair.t, z, T0)
        r = fn(np.full(n, pair.t), yt, X) - target
        terms.append(np.sum(r * r))
    return math.fsum(terms) / (n * len(pairs))


@dataclass
class DiffusionSchedule:
    """Reverse-time grid ``0 = t_0 < ... < t_N = T - T0``."""

    T0: float
    T: float
    grid: np.ndarray
    spacing: str = "uniform"

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if not 0 < self.T0 < self.T:
            raise ConfigError(f"need 0 < T0 < T, got T0={self.T0}, T={self.T}")
        if len(self.grid) < 2 or np.any(np.diff(self.grid) <= 0):
            raise ConfigError("grid must be strictly increasing with N >= 1")
        if self.grid[0] != 0.0 or self.grid[-1] != self.T - self.T0:
            raise ConfigError("grid must run from 0 to T - T0")

    @property
    def N(self):
        return len(self.grid) - 1

    @property
    def steps(self):
        return np.diff(self.grid)

    @property
    def drift_times(self):
        """Diffusion times ``T - t_k`` at which the drift is frozen, k < N."""
        return self.T - self.grid[:-1]

    def to_dict(self):
        return {"T0": self.T0, "T": self.T, "N": self.N, "spacing": self.spacing}


def make_schedule(T0, T, N, spacing="uniform"):
    """Uniform grid, or geometric so that ``T - t_k`` clusters near ``T0``."""
    if not (0 < T0 < T) or int(N) != N or N < 1:
        raise ConfigError(f"invalid schedule T0={T0}, T={T}, N={N}")
    N = int(N)
    end = T - T0
    if spacing == "uniform":
        grid = np.arange(N + 1) * (end / N)
    elif spacing == "geometric":
        # reverse-time points T * (T0/T)^{k/N}: geometric from T down to T0
        grid = T - T * (T0 / T) ** (np.arange(N + 1) / N)
    else:
        raise ConfigError(f"unknown spacing {spacing!r}")
    grid[0] = 0.0
    grid[-1] = end
    return DiffusionSchedule(float(T0), float(T), grid, spacing)
