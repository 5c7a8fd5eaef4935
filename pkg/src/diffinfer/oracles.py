"""Closed-form and brute-force reference quantities.

Analytic reverse-time drifts for Gaussian, Gaussian-mixture and bounded 1-D
targets, the Gaussian KL divergence, and sample-based checks used to audit
the learned pipeline.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, ndtr

from .diffusion import dsm_target, ou_coefficients, perturb
from .errors import ConfigError, DivergenceError, SingularityError


def _check_t(t):
    if not np.all(np.asarray(t) > 0):
        raise ConfigError(f"drift oracles need t > 0, got {t}")


def _t_like(t, y):
    """Align a scalar or per-row time vector with the leading axes of ``y``."""
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        return t
    return t.reshape(t.shape + (1,) * (np.ndim(y) - t.ndim))


@dataclass
class GaussianParams:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ConfigError(f"covariance shape {self.cov.shape} does not match mean of length {d}")
        if not np.allclose(self.cov, self.cov.T, rtol=0, atol=1e-12):
            raise ConfigError("covariance is not symmetric")
        if np.min(np.linalg.eigvalsh(self.cov)) <= 0:
            raise SingularityError("covariance is not positive definite")

    @classmethod
    def scalar(cls, mean, var):
        return cls([mean], [[var]])

    @property
    def d(self):
        return self.mean.shape[0]

    def logpdf(self, y):
        y = np.asarray(y, dtype=float).reshape(-1, self.d)
        L = np.linalg.cholesky(self.cov)
        sol = np.linalg.solve(L, (y - self.mean).T)
        logdet = 2 * np.sum(np.log(np.diag(L)))
        return -0.5 * (np.sum(sol * sol, axis=0) + logdet + self.d * np.log(2 * np.pi))

    def sample(self, n, rng):
        L = np.linalg.cholesky(self.cov)
        return self.mean + rng.standard_normal((n, self.d)) @ L.T


def gaussian_drift(target, t, y):
    """Exact ``b(t, y)`` when ``Y_0 ~ N(mean, cov)``; ``y`` is ``(..., d)``.

    The diffused law is ``N(e^{-t} mean, e^{-2t} cov + (1 - e^{-2t}) I)``.
    """
    _check_t(t)
    y = np.asarray(y, dtype=float)
    flat = y.reshape(-1, target.d)
    mu, s2 = ou_coefficients(np.broadcast_to(np.asarray(t, dtype=float).reshape(-1),
                                             (flat.shape[0],)))
    V = (mu * mu)[:, None, None] * target.cov + s2[:, None, None] * np.eye(target.d)
    resid = flat - mu[:, None] * target.mean
    return y - 2.0 * np.linalg.solve(V, resid[..., None])[..., 0].reshape(y.shape)


@dataclass
class MixtureTarget:
    """1-D Gaussian mixture given by weights and ``(mean, variance)`` pairs."""

    weights: np.ndarray
    components: list

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.components = [(float(m), float(v)) for m, v in self.components]
        if len(self.weights) != len(self.components) or len(self.weights) == 0:
            raise ConfigError("need one weight per component")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1) > 1e-12:
            raise ConfigError("mixture weights must be positive and sum to 1")
        if any(v <= 0 for _, v in self.components):
            raise ConfigError("component variances must be positive")

    @property
    def means(self):
        return np.array([m for m, _ in self.components])

    @property
    def variances(self):
        return np.array([v for _, v in self.components])

    def diffused(self, t):
        """Component means and variances of the law of ``Y_t`` (last axis)."""
        t = np.asarray(t, dtype=float)
        if np.all(t == 0):
            mu, s2 = np.ones_like(t), np.zeros_like(t)
        else:
            mu, s2 = ou_coefficients(t)
        mu, s2 = np.asarray(mu)[..., None], np.asarray(s2)[..., None]
        return mu * self.means, mu * mu * self.variances + s2

    def _log_terms(self, t, y):
        m, v = self.diffused(_t_like(t, y))
        y = np.asarray(y, dtype=float)[..., None]
        return (np.log(self.weights) - 0.5 * np.log(2 * np.pi * v)
                - 0.5 * (y - m) ** 2 / v), m, v

    def logpdf(self, y, t=0.0):
        terms, _, _ = self._log_terms(t, y)
        return logsumexp(terms, axis=-1)

    def cdf(self, y, t=0.0):
        m, v = self.diffused(_t_like(t, y))
        y = np.asarray(y, dtype=float)[..., None]
        return np.sum(self.weights * ndtr((y - m) / np.sqrt(v)), axis=-1)

    def sample(self, n, rng):
        k = rng.choice(len(self.weights), size=n, p=self.weights)
        return (self.means[k] + np.sqrt(self.variances[k]) * rng.standard_normal(n)).reshape(-1, 1)


def mixture_drift(target, t, y):
    """``y + 2 * score`` of the diffused mixture, responsibilities via log-sum-exp."""
    _check_t(t)
    terms, m, v = target._log_terms(t, y)
    resp = np.exp(terms - logsumexp(terms, axis=-1, keepdims=True))
    y = np.asarray(y, dtype=float)
    score = np.sum(resp * (-(y[..., None] - m) / v), axis=-1)
    return y + 2.0 * score


@dataclass
class BoundedDensity1D:
    """Density on [0, 1] evaluated by Gauss-Legendre quadrature."""

    density: object
    quadrature_nodes: int = 128

    def __post_init__(self):
        if self.quadrature_nodes < 16:
            raise ConfigError("use at least 16 quadrature nodes")
        u, w = self.nodes()
        p = np.asarray(self.density(u), dtype=float)
        if np.any(p < 0):
            raise ConfigError("density must be non-negative")
        mass = float(np.dot(w, p))
        if abs(mass - 1) > 1e-6:
            raise ConfigError(f"density integrates to {mass}, not 1")

    def nodes(self):
        x, w = np.polynomial.legendre.leggauss(self.quadrature_nodes)
        return 0.5 * (x + 1), 0.5 * w


def uniform_density(nodes=128):
    return BoundedDensity1D(lambda u: np.ones_like(np.asarray(u, dtype=float)), nodes)


def quadrature_drift(target, t, y):
    """``b(t, y) = y + 2 (e^{-t} E[Y_0 | Y_t = y] - y) / (1 - e^{-2t})`` by quadrature."""
    _check_t(t)
    y = np.asarray(y, dtype=float)
    mu, s2 = ou_coefficients(_t_like(t, y))
    u, w = target.nodes()
    with np.errstate(divide="ignore"):
        logp = np.log(w * np.asarray(target.density(u), dtype=float))
    mu_u = np.asarray(mu)[..., None] * u
    expo = logp - 0.5 * (y[..., None] - mu_u) ** 2 / np.asarray(s2)[..., None]
    expo -= np.max(expo, axis=-1, keepdims=True)
    post = np.exp(expo)
    cond_mean = np.sum(post * u, axis=-1) / np.sum(post, axis=-1)
    return y + 2.0 * (mu * cond_mean - y) / s2


def kl_gaussians(p, q):
    """KL(p || q) for multivariate normals via Cholesky factors."""
    try:
        Lp = np.linalg.cholesky(p.cov)
        Lq = np.linalg.cholesky(q.cov)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("covariance is not positive definite") from exc
    diff = np.linalg.solve(Lq, p.mean - q.mean)
    M = np.linalg.solve(Lq, Lp)
    logdet_ratio = 2 * (np.sum(np.log(np.diag(Lp))) - np.sum(np.log(np.diag(Lq))))
    val = 0.5 * (diff @ diff - logdet_ratio + np.sum(M * M) - p.d)
    return max(float(val), 0.0)


def kl_monte_carlo(p, q, n, rng):
    """Monte-Carlo ``E_p[log p - log q]`` and its standard error."""
    y = p.sample(n, rng)
    r = p.logpdf(y) - q.logpdf(y)
    return float(r.mean()), float(r.std(ddof=1) / np.sqrt(n))


def ks_distance(samples, reference_cdf):
    """Two-sided Kolmogorov-Smirnov statistic against a reference CDF."""
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    n = x.size
    if n == 0:
        raise ConfigError("no samples supplied")
    F = np.asarray(reference_cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n), 0.0))


def lipschitz_probe(drift_fn, t_range, y_range, grid_size, h=1e-4, x=None):
    """Max central-difference ``|d b / d y|`` over a ``grid_size``-square grid."""
    t_lo, t_hi = t_range
    if not t_lo > 0 or t_hi < t_lo:
        raise ConfigError(f"time range must lie in (0, T], got {t_range}")
    if grid_size < 2:
        raise ConfigError("grid_size must be >= 2")
    ys = np.linspace(y_range[0], y_range[1], grid_size)
    delta = h * (1 + np.abs(ys))
    worst = 0.0
    for t in np.linspace(t_lo, t_hi, grid_size):
        up = np.asarray(drift_fn(t, (ys + delta)[:, None], x), dtype=float).reshape(-1)
        dn = np.asarray(drift_fn(t, (ys - delta)[:, None], x), dtype=float).reshape(-1)
        worst = max(worst, float(np.max(np.abs(up - dn) / (2 * delta))))
    return worst


@dataclass
class LossGapResult:
    gap: float
    gap_se: float
    l2: float
    l2_se: float

    def agrees(self, k=3.0):
        return abs(self.gap - self.l2) <= k * np.hypot(self.gap_se, self.l2_se)


def loss_gap_check(s_fn, b_fn, sampler, T0, T, mc_size, rng):
    """Two independent estimates of ``L(s) - L(b)`` and of the mean ``||s - b||^2``.

    ``s_fn`` and ``b_fn`` take ``(t, y, x)`` with a time vector and ``(n, d)``
    states; ``sampler(n, rng)`` draws ``(n, d)`` clean targets.
    """
    if mc_size < 1000:
        raise ConfigError("mc_size must be at least 1000")

    def draw():
        y0 = np.asarray(sampler(mc_size, rng), dtype=float).reshape(mc_size, -1)
        t = rng.uniform(T0, T, size=mc_size)
        z = rng.standard_normal(y0.shape)
        return y0, t, z

    y0, t, z = draw()
    yt = perturb(y0, t, z)
    tgt = dsm_target(y0, t, z)
    ds = np.asarray(s_fn(t, yt, None)).reshape(yt.shape) - tgt
    db = np.asarray(b_fn(t, yt, None)).reshape(yt.shape) - tgt
    gap_terms = np.sum(ds * ds, axis=1) - np.sum(db * db, axis=1)

    y0, t, z = draw()
    yt = perturb(y0, t, z)
    d = np.asarray(s_fn(t, yt, None)).reshape(yt.shape) - np.asarray(b_fn(t, yt, None)).reshape(yt.shape)
    l2_terms = np.sum(d * d, axis=1)

    res = LossGapResult(float(gap_terms.mean()), float(gap_terms.std(ddof=1) / np.sqrt(mc_size)),
                        float(l2_terms.mean()), float(l2_terms.std(ddof=1) / np.sqrt(mc_size)))
    if not all(np.isfinite([res.gap, res.gap_se, res.l2, res.l2_se])):
        raise DivergenceError("loss-gap estimate is not finite")
    return res
