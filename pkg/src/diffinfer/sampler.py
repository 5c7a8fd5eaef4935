"""Euler-Maruyama simulation of the learned reverse dynamics.

The chain starts from ``N(0, I)`` (replacing the unknown ``p_T``), freezes
the drift at the left node ``s(T - t_k, Y_{t_k}, x)`` on each step, and stops
at ``t_N = T - T0``.
"""
import numpy as np

from . import kernels
from .diffusion import DiffusionSchedule
from .errors import ConfigError, DivergenceError, ShapeError
from .training import TrainedModel

DIVERGENCE_LIMIT = 1e6
_CHUNK = 4096


def em_step(drift_value, y, dt, noise):
    """``y + drift * dt + sqrt(2 dt) * noise``."""
    if not dt > 0:
        raise ConfigError(f"step size must be positive, got {dt}")
    drift_value = np.asarray(drift_value, dtype=float)
    y = np.asarray(y, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if not drift_value.shape == y.shape == noise.shape:
        raise ShapeError("drift, state and noise must share a shape")
    return y + drift_value * dt + np.sqrt(2.0 * dt) * noise


def path_rng(key, index):
    """Counter-based stream for path ``index`` under a 64-bit master ``key``."""
    return np.random.Generator(np.random.Philox(key=np.array([key, index], dtype=np.uint64)))


def _master_key(rng):
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63))
    if rng is None:
        raise ConfigError("a seed or Generator is required")
    return int(rng) % 2**64


def _draws(rng, N, d_y):
    """Prior draw then the per-step noise, in that fixed order."""
    y0 = rng.standard_normal(d_y)
    noise = rng.standard_normal((N, d_y))
    return y0, noise


def _integrate_fn(drift_fn, x, schedule, y, noise):
    """Generic loop for a Python drift callable; ``y`` is ``(paths, d_y)``."""
    for k, (t, dt) in enumerate(zip(schedule.drift_times, schedule.steps)):
        b = np.asarray(drift_fn(t, y, x), dtype=float).reshape(y.shape)
        y = y + b * dt + np.sqrt(2.0 * dt) * noise[k]
        norms = np.sqrt(np.sum(y * y, axis=1))
        if not np.all(norms <= DIVERGENCE_LIMIT):
            raise DivergenceError(f"sample path diverged at step {k}", step=k)
    return y


def _integrate_model(model, x, schedule, y, noise):
    net = model.net
    std = model.standardization
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if x.shape[1] != net.d_x:
        raise ShapeError(f"model expects x in R^{net.d_x}, got {x.shape[1]} values")
    xs = std.x(x)
    cond = np.ascontiguousarray(np.broadcast_to(xs, (len(y), net.d_x)))
    y = np.ascontiguousarray(y, dtype=np.float64)
    bad = kernels.em_integrate(
        net.weights, net.biases, y, cond,
        np.ascontiguousarray(net.time_feature(schedule.drift_times)),
        np.ascontiguousarray(schedule.steps), np.ascontiguousarray(noise),
        net.clamp, net.bound, std.y_shift, std.y_scale, DIVERGENCE_LIMIT)
    if bad >= 0:
        raise DivergenceError(f"sample path diverged at step {bad}", step=int(bad))
    return std.y_inverse(y)


def _check_schedule(model, schedule):
    if not isinstance(schedule, DiffusionSchedule):
        raise ConfigError("schedule must be a DiffusionSchedule")
    if isinstance(model, TrainedModel) and schedule.T > model.T + 1e-12:
        # times above the training range are extrapolation for the network
        raise ConfigError(f"schedule T={schedule.T} exceeds training T={model.T}")
    if isinstance(model, TrainedModel) and schedule.T0 < model.T0 - 1e-12:
        raise ConfigError(f"schedule T0={schedule.T0} below training T0={model.T0}")


def _run(model, x, schedule, y, noise):
    if isinstance(model, TrainedModel):
        return _integrate_model(model, x, schedule, y, noise)
    return _integrate_fn(model, x, schedule, y, noise)


def _d_y(model, d_y):
    if isinstance(model, TrainedModel):
        return model.d_y
    if d_y is None:
        raise ConfigError("d_y is required with a drift callable")
    return d_y


def sample_one(model, x, schedule, rng, d_y=None, noise=True):
    """One reverse-time sample at covariate ``x``.

    ``model`` is a :class:`TrainedModel` (samples come back in data units) or
    a drift callable ``f(t, y, x)`` on ``(paths, d_y)`` arrays.
    ``noise=False`` zeroes the Brownian increments but still draws the prior.
    """
    _check_schedule(model, schedule)
    d_y = _d_y(model, d_y)
    y0, eps = _draws(rng, schedule.N, d_y)
    if not noise:
        eps = np.zeros_like(eps)
    return _run(model, x, schedule, y0[None, :], eps[:, None, :])[0]


def generate(model, x, schedule, M, rng, d_y=None, noise=True):
    """``M`` independent samples as an ``(M, d_y)`` array.

    Path ``i`` uses :func:`path_rng` ``(key, i)`` where ``key`` comes from
    ``rng`` (a Generator, consumed once, or an integer seed), so output does
    not depend on how paths are batched.
    """
    if M < 1:
        raise ConfigError(f"need at least one sample, got M={M}")
    _check_schedule(model, schedule)
    d_y = _d_y(model, d_y)
    key = _master_key(rng)
    out = np.empty((M, d_y))
    for lo in range(0, M, _CHUNK):
        hi = min(lo + _CHUNK, M)
        y = np.empty((hi - lo, d_y))
        eps = np.empty((schedule.N, hi - lo, d_y))
        for i in range(lo, hi):
            y[i - lo], eps[:, i - lo] = _draws(path_rng(key, i), schedule.N, d_y)
        if not noise:
            eps[:] = 0.0
        out[lo:hi] = _run(model, x, schedule, y, eps)
    return out


def samples_csv(samples, names=None):
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    names = names or [f"y{i + 1}" for i in range(samples.shape[1])]
    lines = [",".join(names)]
    lines += [",".join(repr(float(v)) for v in row) for row in samples]
    return "\n".join(lines) + "\n"
