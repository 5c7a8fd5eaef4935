"""Simulation harness for the three regression models.

Each replication draws a fresh dataset, fits the drift network on a 90%
training split, generates ``M`` samples at every test point and records the
studentized statistic. Replication ``j`` is driven by a stream that depends
only on ``(master_seed, j)``.
"""
import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .diffusion import make_schedule
from .errors import ConfigError, DiffInferError
from .inference import (coverage_probability, mse_bias_variance, normal_quantile,
                        sample_moments, studentized_stat)
from .oracles import GaussianParams, gaussian_drift
from .sampler import generate
from .training import TrainConfig, train

log = logging.getLogger(__name__)

MODEL_DIMS = {"I": 3, "II": 3, "III": 5}
REPORT_COLUMNS = ["model", "x", "CP", "MSE", "Variance", "Bias2", "M", "M_tilde", "alpha",
                  "n", "seed"]


def _check_model(model_id):
    if model_id not in MODEL_DIMS:
        raise ConfigError(f"unknown model {model_id!r}; expected one of I, II, III")


def _as_points(x, model_id):
    x = np.asarray(x, dtype=float)
    x2 = np.atleast_2d(x)
    if x2.shape[1] != MODEL_DIMS[model_id]:
        raise ConfigError(f"model {model_id} takes {MODEL_DIMS[model_id]} covariates, "
                          f"got {x2.shape[1]}")
    return x2


def true_regression(model_id, x):
    """Regression function ``f0``; a single point gives a float."""
    _check_model(model_id)
    X = _as_points(x, model_id)
    x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2]
    if model_id == "I":
        f = (x1 - 1) ** 2 + (x2 + 1) ** 3 - 3 * x3
    elif model_id == "II":
        f = (x1 - 2 + x2 ** 2) ** 2 + (3 - x2) ** 2 + np.sqrt(x3 + 1) * (x3 - 1) ** 2
    else:
        f = x1 ** 2 + 0.5 * np.exp(x2 + x3 / 3) + X[:, 3] - X[:, 4]
    return float(f[0]) if np.ndim(x) == 1 else f


def noise_scale(model_id, x):
    """Conditional standard deviation of ``Y - f0(X)`` at ``x``."""
    _check_model(model_id)
    X = _as_points(x, model_id)
    if model_id == "I":
        s = np.ones(len(X))
    elif model_id == "II":
        s = np.full(len(X), np.sqrt(1 / 12))
    else:
        s = (1 + X[:, 1] ** 2 + X[:, 4] ** 2) / 8
    return float(s[0]) if np.ndim(x) == 1 else s


def _noise(model_id, X, rng):
    if model_id == "II":
        return rng.uniform(-0.5, 0.5, size=len(X))
    eps = rng.standard_normal(len(X))
    if model_id == "III":
        eps = eps * (1 + X[:, 1] ** 2 + X[:, 4] ** 2) / 8
    return eps


def gen_dataset(model_id, n, rng):
    _check_model(model_id)
    if n < 1:
        raise ConfigError(f"n must be positive, got {n}")
    d = MODEL_DIMS[model_id]
    if model_id == "III":
        X = rng.standard_normal((n, d))
    else:
        X = rng.uniform(0, 1, size=(n, d))
    Y = true_regression(model_id, X) + _noise(model_id, X, rng)
    return Dataset(X, Y.reshape(-1, 1))


def sample_conditional(model_id, x, n, rng):
    """``n`` draws of ``Y`` given the covariate fixed at ``x``."""
    X = np.repeat(_as_points(x, model_id), n, axis=0)
    return true_regression(model_id, X) + _noise(model_id, X, rng)


@dataclass
class SimulationSpec:
    model_id: str = "I"
    n: int = 10000
    M: int = 100
    M_tilde: int = 1000
    alpha: float = 0.05
    # list of covariate vectors, or the string "random"
    test_points: object = field(default_factory=lambda: [[0.5, 0.5, 0.5]])
    master_seed: int = 0
    train_config: TrainConfig = field(default_factory=lambda: TrainConfig(val_fraction=0.0))
    T0: float = 0.01
    T: float = 3.0
    N: int = 200
    spacing: str = "uniform"
    test_fraction: float = 0.1
    # "retrain" redraws data and refits per replication; "shared" fits once
    training: str = "retrain"
    # replace the network by the exact Gaussian-noise drift
    oracle_drift: bool = False
    workers: int = 1

    def __post_init__(self):
        _check_model(self.model_id)
        if isinstance(self.train_config, dict):
            self.train_config = TrainConfig(**self.train_config)
        if self.n < 10 or self.M < 2 or self.M_tilde < 1:
            raise ConfigError("need n >= 10, M >= 2 and M_tilde >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.training not in ("retrain", "shared"):
            raise ConfigError(f"training must be 'retrain' or 'shared', got {self.training!r}")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must be in (0, 1)")
        if self.test_points != "random":
            self.test_points = [list(map(float, p)) for p in _as_points(self.test_points, self.model_id)]
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.schedule  # validates T0, T, N

    @property
    def schedule(self):
        return make_schedule(self.T0, self.T, self.N, self.spacing)

    @property
    def random_points(self):
        return self.test_points == "random"

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["train_config"] = self.train_config.to_dict()
        return d


@dataclass
class ReplicationResult:
    index: int
    points: list
    means: list
    stats: list
    failed: bool = False
    error: str = ""


@dataclass
class SimulationReport:
    spec: SimulationSpec
    rows: list
    n_failed: int
    wall_time: float
    replications: list = field(default_factory=list)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        s = self.spec
        for r in self.rows:
            w.writerow([s.model_id, r["x"], repr(r["CP"]), repr(r["MSE"]), repr(r["Variance"]),
                        repr(r["Bias2"]), s.M, s.M_tilde, repr(s.alpha), s.n, s.master_seed])
        return buf.getvalue()

    def to_json(self):
        return json.dumps({"spec": self.spec.to_dict(), "rows": self.rows,
                           "n_failed": self.n_failed, "wall_time": self.wall_time}, indent=2)


def replication_rng(master_seed, j):
    return np.random.Generator(np.random.Philox(key=np.array([master_seed, j], dtype=np.uint64)))


def _format_x(x):
    return ";".join(repr(float(v)) for v in x)


def _oracle_model(model_id, x):
    """Exact drift of ``N(f0(x), sigma(x)^2)`` in data units."""
    target = GaussianParams.scalar(true_regression(model_id, x), noise_scale(model_id, x) ** 2)
    return lambda t, y, _x: gaussian_drift(target, t, y)


def _fit(spec, rng):
    data = gen_dataset(spec.model_id, spec.n, rng)
    n_test = int(np.floor(spec.test_fraction * spec.n))
    perm = rng.permutation(spec.n)
    test = data.subset(perm[:n_test])
    model = None
    if not spec.oracle_drift:
        cfg = TrainConfig(**{**spec.train_config.to_dict(),
                             "seed": int(rng.integers(0, 2**63))})
        model = train(data.subset(np.sort(perm[n_test:])), cfg)
    return model, test


def run_replication(spec, j, shared=None):
    """Replication ``j``; pure function of ``(spec, j)`` (and the shared fit)."""
    rng = replication_rng(spec.master_seed, j)
    try:
        if shared is None:
            model, test = _fit(spec, rng)
        else:
            model, test = shared
        if spec.random_points:
            points = [test.X[rng.integers(len(test))]]
        else:
            points = [np.asarray(p) for p in spec.test_points]
        schedule = spec.schedule
        means, stats = [], []
        for x in points:
            drift = _oracle_model(spec.model_id, x) if spec.oracle_drift else model
            samples = generate(drift, x, schedule, spec.M, rng, d_y=1)
            mom = sample_moments(samples)
            means.append(float(mom.mean[0]))
            stats.append(float(studentized_stat(mom, true_regression(spec.model_id, x))[0]))
        return ReplicationResult(j, [list(map(float, p)) for p in points], means, stats)
    except DiffInferError as exc:
        log.warning("replication %d failed: %s", j, exc)
        return ReplicationResult(j, [], [], [], failed=True, error=str(exc))


def _aggregate(spec, results):
    ok = [r for r in results if not r.failed]
    if spec.random_points:
        groups = {"random": [(r.points[0], r.means[0], r.stats[0]) for r in ok]}
    else:
        groups = {_format_x(p): [(p, r.means[i], r.stats[i]) for r in ok]
                  for i, p in enumerate(spec.test_points)}
    rows = []
    for label, items in groups.items():
        if not items:
            raise DiffInferError("no successful replications")
        if spec.random_points:
            # each replication has its own point, so the error is against its own f0
            errs = [m - true_regression(spec.model_id, np.asarray(p)) for p, m, _ in items]
            mse, var, bias2 = mse_bias_variance(errs, 0.0)
        else:
            truth = true_regression(spec.model_id, np.asarray(items[0][0]))
            mse, var, bias2 = mse_bias_variance([m for _, m, _ in items], truth)
        cp = coverage_probability([s for _, _, s in items], spec.alpha)
        rows.append({"x": label, "CP": cp, "MSE": mse, "Variance": var, "Bias2": bias2})
    return rows


def run_replications(spec, progress=None):
    """Full replication study; returns a :class:`SimulationReport`."""
    start = time.perf_counter()
    shared = None
    if spec.training == "shared":
        shared = _fit(spec, replication_rng(spec.master_seed, 2**63))
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            results = list(pool.map(run_replication, [spec] * spec.M_tilde,
                                    range(spec.M_tilde), [shared] * spec.M_tilde))
    else:
        results = []
        for j in range(spec.M_tilde):
            results.append(run_replication(spec, j, shared))
            if progress:
                progress(j, results[-1])
    n_failed = sum(r.failed for r in results)
    if n_failed > 0.01 * spec.M_tilde:
        raise DiffInferError(f"{n_failed} of {spec.M_tilde} replications failed")
    rows = _aggregate(spec, results)
    return SimulationReport(spec, rows, n_failed, time.perf_counter() - start, results)


def critical_value(alpha):
    return normal_quantile(1 - alpha / 2)
