"""Empirical-risk training of the drift network by denoising score matching."""
import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .dataset import Dataset
from .diffusion import TimeNoisePairs, dsm_target, empirical_loss, perturb
from .errors import ConfigError, DivergenceError
from .nn import ScoreNetwork, build_inputs, init_network

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    m: int = 4096
    epochs: int = 200
    batch_size: int = 256
    lr: float = 1e-2
    seed: int = 0
    T0: float = 0.01
    T: float = 3.0
    resample_pairs_per_epoch: bool = True
    val_fraction: float = 0.1
    hidden_dims: tuple = (32, 32, 32)
    # each data row is matched with this many (t, z) pairs per epoch
    pairs_per_row: int = 4
    lr_schedule: str = "cosine"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    ema_decay: float = 0.999
    early_stopping: bool = False
    patience: int = 20
    time_rescale: bool = False
    input_clamp_radius: float = None
    output_bound: float = None

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        self.validate()

    def validate(self):
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if self.epochs < 1 or self.batch_size < 1 or self.pairs_per_row < 1:
            raise ConfigError("epochs, batch_size and pairs_per_row must be positive")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 < self.T0 < self.T:
            raise ConfigError(f"need 0 < T0 < T, got T0={self.T0}, T={self.T}")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if not 0 <= self.ema_decay < 1:
            raise ConfigError(f"ema_decay must be in [0, 1), got {self.ema_decay}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"hidden dims must be positive, got {self.hidden_dims}")

    def to_dict(self):
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


@dataclass
class Standardization:
    x_shift: np.ndarray
    x_scale: np.ndarray
    y_shift: np.ndarray
    y_scale: np.ndarray

    @classmethod
    def fit(cls, X, Y):
        def stats(A):
            shift = A.mean(axis=0) if len(A) else np.zeros(A.shape[1])
            scale = A.std(axis=0) if len(A) else np.ones(A.shape[1])
            # constant columns keep unit scale
            scale = np.where(scale > 0, scale, 1.0)
            return shift, scale

        xs, xc = stats(np.asarray(X, dtype=float))
        ys, yc = stats(np.asarray(Y, dtype=float))
        return cls(xs, xc, ys, yc)

    @classmethod
    def identity(cls, d_x, d_y):
        return cls(np.zeros(d_x), np.ones(d_x), np.zeros(d_y), np.ones(d_y))

    def x(self, X):
        return (np.asarray(X, dtype=float) - self.x_shift) / self.x_scale

    def y(self, Y):
        return (np.asarray(Y, dtype=float) - self.y_shift) / self.y_scale

    def y_inverse(self, Ys):
        return np.asarray(Ys, dtype=float) * self.y_scale + self.y_shift

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("x_shift", "x_scale", "y_shift", "y_scale")}

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.asarray(d[k], dtype=float) for k in ("x_shift", "x_scale", "y_shift", "y_scale")))


@dataclass
class TrainedModel:
    """Fitted drift network; it operates on standardized coordinates."""

    net: ScoreNetwork
    T0: float
    T: float
    standardization: Standardization
    loss_trace: list = field(default_factory=list)

    @property
    def d_x(self):
        return self.net.d_x

    @property
    def d_y(self):
        return self.net.d_y

    def drift(self, t, y, x):
        """Drift in standardized coordinates; ``y`` is ``(batch, d_y)``."""
        inp = build_inputs(self.net, t, y, x)
        return kernels.forward(self.net.weights, self.net.biases, inp, self.net.bound)

    def to_dict(self):
        return {
            "network": self.net.to_dict(),
            "T0": self.T0,
            "T": self.T,
            "standardization": self.standardization.to_dict(),
            "loss_trace": [list(row) for row in self.loss_trace],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(ScoreNetwork.from_dict(d["network"]), float(d["T0"]), float(d["T"]),
                   Standardization.from_dict(d["standardization"]),
                   [tuple(r) for r in d.get("loss_trace", [])])


def loss_trace_csv(trace):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_loss"])
    for epoch, tr, va in trace:
        w.writerow([epoch, repr(float(tr)), "" if va is None else repr(float(va))])
    return buf.getvalue()


def sample_time_noise(m, T0, T, d_y, rng):
    """``m`` i.i.d. pairs: ``t ~ U[T0, T]`` and ``z ~ N(0, I_{d_y})``."""
    if m < 1:
        raise ConfigError(f"need at least one time/noise pair, got m={m}")
    if not 0 < T0 < T:
        raise ConfigError(f"need 0 < T0 < T, got T0={T0}, T={T}")
    t = rng.uniform(T0, T, size=m)
    z = rng.standard_normal((m, d_y))
    return TimeNoisePairs(t, z)


def _epoch_batch(Xs, Ys, pairs, k, rng):
    """Rows visited ``k`` times in shuffled order, each with a random shared pair."""
    n = len(Ys)
    rows = np.concatenate([rng.permutation(n) for _ in range(k)])
    j = rng.integers(0, len(pairs), size=rows.size)
    t = pairs.t[j]
    z = pairs.z[j]
    y0 = Ys[rows]
    return t, perturb(y0, t, z), Xs[rows], dsm_target(y0, t, z)


def train(dataset, config):
    """Fit the drift network; deterministic given ``config.seed``."""
    if not isinstance(dataset, Dataset):
        raise ConfigError("train expects a Dataset")
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty dataset")
    config.validate()
    if not (np.all(np.isfinite(dataset.X)) and np.all(np.isfinite(dataset.Y))):
        raise ConfigError("dataset contains non-finite values")

    ss = np.random.SeedSequence(config.seed)
    init_seed, split_seed, pair_seed, val_seed = ss.spawn(4)
    rng = np.random.default_rng(pair_seed)

    n = len(dataset)
    n_val = int(np.floor(config.val_fraction * n))
    order = np.random.default_rng(split_seed).permutation(n)
    tr_idx, va_idx = np.sort(order[n_val:]), np.sort(order[:n_val])
    if len(tr_idx) == 0:
        raise ConfigError("validation split leaves no training rows")

    std = Standardization.fit(dataset.X[tr_idx], dataset.Y[tr_idx])
    Xs, Ys = std.x(dataset.X), std.y(dataset.Y)
    Xtr, Ytr = Xs[tr_idx], Ys[tr_idx]

    dims = [1 + dataset.d_y + dataset.d_x, *config.hidden_dims, dataset.d_y]
    time_range = (config.T0, config.T) if config.time_rescale else None
    net = init_network(dims, init_seed.generate_state(1)[0], config.input_clamp_radius,
                       config.output_bound, time_range)
    ema = net.copy()
    m1 = [np.zeros_like(p) for p in net.params]
    m2 = [np.zeros_like(p) for p in net.params]

    val_pairs = None
    if n_val:
        val_pairs = sample_time_noise(min(config.m, 64), config.T0, config.T, dataset.d_y,
                                      np.random.default_rng(val_seed))

    rows_per_epoch = len(tr_idx) * config.pairs_per_row
    steps_per_epoch = -(-rows_per_epoch // config.batch_size)
    total = steps_per_epoch * config.epochs
    step = 0
    pairs = sample_time_noise(config.m, config.T0, config.T, dataset.d_y, rng)
    trace = []
    best, stale = np.inf, 0
    for epoch in range(1, config.epochs + 1):
        if config.resample_pairs_per_epoch and epoch > 1:
            pairs = sample_time_noise(config.m, config.T0, config.T, dataset.d_y, rng)
        t, yt, x, target = _epoch_batch(Xtr, Ytr, pairs, config.pairs_per_row, rng)
        inputs = build_inputs(net, t, yt, x)
        if config.lr_schedule == "cosine":
            s = np.arange(step + 1, step + steps_per_epoch + 1)
            lrs = config.lr * 0.5 * (1.0 + np.cos(np.pi * s / total))
        else:
            lrs = np.full(steps_per_epoch, config.lr)
        losses = kernels.train_epoch(
            net.weights, net.biases, ema.weights, ema.biases, m1, m2, inputs, target,
            config.batch_size, step, np.ascontiguousarray(lrs), config.beta1, config.beta2,
            config.epsilon, config.ema_decay, net.bound)
        step += steps_per_epoch
        sizes = np.full(steps_per_epoch, config.batch_size, dtype=float)
        sizes[-1] = rows_per_epoch - config.batch_size * (steps_per_epoch - 1)
        train_loss = float(np.dot(losses, sizes) / rows_per_epoch)
        current = ema if config.ema_decay > 0 else net
        val_loss = None
        if val_pairs is not None:
            val_loss = empirical_loss(current, Xs[va_idx], Ys[va_idx], val_pairs)
        if not np.isfinite(train_loss) or (val_loss is not None and not np.isfinite(val_loss)):
            raise DivergenceError(f"training loss became non-finite at epoch {epoch}",
                                  epoch=epoch)
        trace.append((epoch, train_loss, val_loss))
        log.debug("epoch %d train %.5f val %s", epoch, train_loss, val_loss)
        if config.early_stopping and val_loss is not None:
            if val_loss < best:
                best, stale = val_loss, 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    final = ema if config.ema_decay > 0 else net
    return TrainedModel(final.copy(), config.T0, config.T, std, trace)


def evaluate_drift_mse(drift_fn, oracle_drift, t_grid, y_grid, x, weights=None):
    """Grid average of ``||drift_fn - oracle_drift||^2``.

    Both callables take ``(t, y, x)`` with ``y`` of shape ``(k, d_y)``.
    ``weights(t, y_grid)`` (e.g. the diffused marginal density) weights the
    y-grid at each time; weights are normalized per time point.
    """
    t_grid = np.asarray(t_grid, dtype=float).reshape(-1)
    y_grid = np.asarray(y_grid, dtype=float)
    if y_grid.ndim == 1:
        y_grid = y_grid.reshape(-1, 1)
    if t_grid.size == 0 or len(y_grid) == 0:
        raise ConfigError("empty evaluation grid")
    per_t = []
    for t in t_grid:
        d = np.asarray(drift_fn(t, y_grid, x), dtype=float) - np.asarray(
            oracle_drift(t, y_grid, x), dtype=float)
        if d.shape != y_grid.shape:
            raise ConfigError(f"drift output {d.shape} does not match grid {y_grid.shape}")
        sq = np.sum(d * d, axis=1)
        w = np.ones(len(y_grid)) if weights is None else np.asarray(weights(t, y_grid), dtype=float)
        per_t.append(np.dot(w, sq) / np.sum(w))
    return float(np.mean(per_t))
