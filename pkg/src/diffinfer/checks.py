"""Oracle audit suites: each returns ``CheckResult`` rows with explicit thresholds."""
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .diffusion import make_schedule
from .errors import ConfigError
from .oracles import (GaussianParams, MixtureTarget, gaussian_drift, kl_gaussians,
                      kl_monte_carlo, ks_distance, lipschitz_probe, loss_gap_check,
                      mixture_drift, quadrature_drift, uniform_density)
from .sampler import generate


@dataclass
class CheckResult:
    suite: str
    name: str
    value: float
    threshold: float
    passed: bool

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.suite}/{self.name}: {self.value:.6g} (threshold {self.threshold:.6g})"


def _row(suite, name, value, threshold):
    return CheckResult(suite, name, float(value), float(threshold), bool(value <= threshold))


def gaussian_sampler(seed=0, M=20000, T=5.0, T0=0.01, N=500):
    """Standard normal target with exact drift ``b = -y``."""
    target = GaussianParams.scalar(0.0, 1.0)
    s = generate(lambda t, y, _x: gaussian_drift(target, t, y), None,
                 make_schedule(T0, T, N), M, seed, d_y=1)[:, 0]
    return [
        _row("gaussian_sampler", "abs_mean", abs(s.mean()), 0.03),
        _row("gaussian_sampler", "abs_var_minus_1", abs(s.var(ddof=1) - 1), 0.05),
        _row("gaussian_sampler", "ks", ks_distance(s, ndtr), 0.02),
    ]


def mixture_sampler(seed=0, M=20000, T=5.0, T0=0.01, N=500):
    """Symmetric two-component mixture ``0.5 N(-1, 0.25) + 0.5 N(1, 0.25)``."""
    target = MixtureTarget([0.5, 0.5], [(-1.0, 0.25), (1.0, 0.25)])
    s = generate(lambda t, y, _x: mixture_drift(target, t, y), None,
                 make_schedule(T0, T, N), M, seed, d_y=1)[:, 0]
    return [
        _row("mixture_sampler", "abs_positive_mass_minus_half", abs(np.mean(s > 0) - 0.5), 0.03),
        _row("mixture_sampler", "ks", ks_distance(s, target.cdf), 0.03),
    ]


def _random_spd(d, rng):
    A = rng.standard_normal((d, d))
    return A @ A.T / d + 0.3 * np.eye(d)


def kl_pairs(seed=0, pairs=5, n=10**6):
    """Closed-form Gaussian KL against the Monte-Carlo log ratio, in combined SE units."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(pairs):
        d = int(rng.integers(1, 4))
        p = GaussianParams(rng.normal(size=d), _random_spd(d, rng))
        q = GaussianParams(rng.normal(size=d), _random_spd(d, rng))
        exact = kl_gaussians(p, q)
        est, se = kl_monte_carlo(p, q, n, rng)
        out.append(_row("kl", f"pair{k}_d{d}_z", abs(exact - est) / se, 3.0))
    return out


def loss_gap(seed=0, mc_size=10**5, T0=0.01, T=3.0, shifts=(0.5, 1.0)):
    """Shifted drift ``s = b + c``: both estimates should equal ``c^2``."""
    rng = np.random.default_rng(seed)
    target = GaussianParams.scalar(0.3, 0.5)
    out = []
    for c in shifts:
        res = loss_gap_check(lambda t, y, x: gaussian_drift(target, t, y) + c,
                             lambda t, y, x: gaussian_drift(target, t, y),
                             target.sample, T0, T, mc_size, rng)
        # the l2 estimate is exact here, so its SE may be zero
        out.append(_row("loss_gap", f"c{c}_gap_excess_3se", abs(res.gap - c * c) - 3 * res.gap_se, 0.0))
        out.append(_row("loss_gap", f"c{c}_l2_excess_3se", abs(res.l2 - c * c) - 3 * res.l2_se, 1e-12))
    return out


def lipschitz(T0=0.2, T=3.0, grid_size=61, nodes=128):
    """Numeric drift slope for a uniform[0, 1] target against ``2 / T0^2``."""
    target = uniform_density(nodes)
    slope = lipschitz_probe(lambda t, y, x: quadrature_drift(target, t, y), (T0, T), (-3, 3),
                            grid_size)
    return [_row("lipschitz", "max_slope", slope, 2 / T0 ** 2)]


SUITES = {
    "gaussian_sampler": gaussian_sampler,
    "mixture_sampler": mixture_sampler,
    "kl": kl_pairs,
    "loss_gap": loss_gap,
    "lipschitz": lipschitz,
}


def run_suites(names=None, seed=0):
    names = list(SUITES) if names is None else names
    rows = []
    for name in names:
        if name not in SUITES:
            raise ConfigError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
        fn = SUITES[name]
        rows += fn() if name == "lipschitz" else fn(seed=seed)
    return rows
