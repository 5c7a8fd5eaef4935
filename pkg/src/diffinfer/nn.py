"""Dense ReLU network used as the drift estimator ``s(t, y, x)``.

The network input is the concatenation ``[t, y, x]`` and the output lives in
``R^{d_y}``. Heavy lifting is delegated to :mod:`diffinfer.kernels`.
"""
import copy
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, InputError, ShapeError


@dataclass
class ScoreNetwork:
    layer_dims: list
    weights: list
    biases: list
    input_clamp_radius: float = None
    output_bound: float = None
    # (t_min, t_max): when set, t is min-max rescaled to [0, 1] before layer 1
    time_range: tuple = None

    def __post_init__(self):
        dims = [int(d) for d in self.layer_dims]
        self.layer_dims = dims
        if len(dims) < 2 or min(dims) < 1:
            raise ConfigError(f"invalid layer dims {dims}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeError("need one weight matrix and bias per layer")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in self.biases]
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise ShapeError(f"layer {i}: got W{W.shape}, b{b.shape} for dims {dims}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise InputError(f"layer {i} has non-finite parameters")
        for name in ("input_clamp_radius", "output_bound"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ConfigError(f"{name} must be positive, got {val}")
        if self.time_range is not None:
            lo, hi = self.time_range
            if not hi > lo:
                raise ConfigError(f"empty time range {self.time_range}")
            self.time_range = (float(lo), float(hi))

    @property
    def d_in(self):
        return self.layer_dims[0]

    @property
    def d_y(self):
        return self.layer_dims[-1]

    @property
    def d_x(self):
        return self.d_in - 1 - self.d_y

    @property
    def params(self):
        return self.weights + self.biases

    def copy(self):
        return copy.deepcopy(self)

    def time_feature(self, t):
        t = np.asarray(t, dtype=float)
        if self.time_range is None:
            return t
        lo, hi = self.time_range
        return (t - lo) / (hi - lo)

    @property
    def clamp(self):
        return self.input_clamp_radius or 0.0

    @property
    def bound(self):
        return self.output_bound or 0.0

    def to_dict(self):
        d = {
            "layer_dims": list(self.layer_dims),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }
        if self.input_clamp_radius is not None:
            d["input_clamp_radius"] = self.input_clamp_radius
        if self.output_bound is not None:
            d["output_bound"] = self.output_bound
        if self.time_range is not None:
            d["time_range"] = list(self.time_range)
        return d

    @classmethod
    def from_dict(cls, d):
        allowed = {"layer_dims", "weights", "biases", "input_clamp_radius",
                   "output_bound", "time_range"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown network keys: {sorted(unknown)}")
        return cls(
            layer_dims=d["layer_dims"],
            weights=[np.array(w, dtype=float).reshape(len(w), -1) for w in d["weights"]],
            biases=[np.array(b, dtype=float) for b in d["biases"]],
            input_clamp_radius=d.get("input_clamp_radius"),
            output_bound=d.get("output_bound"),
            time_range=tuple(d["time_range"]) if d.get("time_range") else None,
        )

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def init_network(layer_dims, seed, input_clamp_radius=None, output_bound=None,
                 time_range=None):
    """Uniform fan-in scaled weights on [-sqrt(6/fan_in), sqrt(6/fan_in)], zero biases."""
    dims = list(layer_dims)
    if len(dims) < 2 or any(int(d) < 1 for d in dims):
        raise ConfigError(f"layer dims must have >= 2 positive entries, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        lim = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ScoreNetwork(dims, weights, biases, input_clamp_radius, output_bound,
                        time_range)


def build_inputs(net, t, y, x):
    """Stack ``(t, y, x)`` into the ``(batch, d_in)`` network input.

    Applies the optional time rescale and y-clamp. ``t`` may be a scalar or a
    length-batch vector; ``x`` may be a single point broadcast over the batch.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    B = y.shape[0]
    x = np.asarray(x, dtype=float)
    if x.ndim < 2:
        x = x.reshape(1, -1)
    if x.shape[0] == 1:
        x = np.broadcast_to(x, (B, x.shape[1]))
    t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1), (B,))
    if y.shape[1] != net.d_y or x.shape[1] != net.d_x or x.shape[0] != B:
        raise ShapeError(
            f"network expects y in R^{net.d_y}, x in R^{net.d_x}; got y{y.shape}, x{x.shape}")
    inp = np.empty((B, net.d_in))
    inp[:, 0] = net.time_feature(t)
    yy = inp[:, 1:1 + net.d_y]
    yy[:] = y
    if net.input_clamp_radius is not None:
        np.clip(yy, -net.input_clamp_radius, net.input_clamp_radius, out=yy)
    inp[:, 1 + net.d_y:] = x
    if not np.all(np.isfinite(inp)):
        raise InputError("non-finite network input")
    return inp


def forward_batch(net, inputs):
    """Evaluate on prepared ``(batch, d_in)`` inputs (see :func:`build_inputs`)."""
    inputs = np.ascontiguousarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != net.d_in:
        raise ShapeError(f"expected (batch, {net.d_in}) inputs, got {inputs.shape}")
    return kernels.forward(net.weights, net.biases, inputs, net.bound)


def forward(net, t, y, x):
    """Network output at a single ``(t, y, x)``; returns a ``(d_y,)`` array."""
    y = np.asarray(y, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(-1)
    if not np.isfinite(t):
        raise InputError(f"non-finite time {t}")
    return forward_batch(net, build_inputs(net, t, y[None, :], x[None, :]))[0]


def drift(net, t, y, x):
    """Batched evaluation: ``y`` is ``(batch, d_y)``; returns ``(batch, d_y)``."""
    return forward_batch(net, build_inputs(net, t, y, x))


@dataclass
class Gradients:
    weights: list
    biases: list
    loss: float

    @property
    def params(self):
        return self.weights + self.biases


def backward(net, t, y, x, target):
    """Gradient of ``mean ||net(t, y, x) - target||^2`` over the minibatch.

    Does not modify ``net``.
    """
    target = np.atleast_2d(np.asarray(target, dtype=float))
    if target.shape[0] == 0:
        raise ConfigError("empty minibatch")
    inputs = build_inputs(net, t, y, x)
    if target.shape != (inputs.shape[0], net.d_y):
        raise ShapeError(f"targets must be (batch, {net.d_y}), got {target.shape}")
    loss, gW, gb = kernels.loss_and_grad(net.weights, net.biases, inputs, target,
                                         net.bound)
    return Gradients(gW, gb, loss)


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, net, **hyper):
        return cls([np.zeros_like(p) for p in net.params],
                   [np.zeros_like(p) for p in net.params], 0, **hyper)

    def copy(self):
        return copy.deepcopy(self)


def adam_step(net, grads, state):
    """One bias-corrected Adam update; returns new ``(net, state)``."""
    gparams = grads.params if isinstance(grads, Gradients) else list(grads)
    if len(gparams) != len(net.params) or any(
            g.shape != p.shape for g, p in zip(gparams, net.params)):
        raise ShapeError("gradient shapes do not match the network")
    if any(m.shape != p.shape for m, p in zip(state.first_moment, net.params)):
        raise ShapeError("optimizer state does not match the network")
    net, state = net.copy(), state.copy()
    state.step_count += 1
    kernels.adam_update(net.params, [np.ascontiguousarray(g, dtype=float) for g in gparams],
                        state.first_moment, state.second_moment, state.step_count,
                        state.lr, state.beta1, state.beta2, state.epsilon)
    return net, state


def preactivation_margin(net, inputs):
    """Smallest |pre-activation| over hidden units, a distance-to-kink measure."""
    h = np.asarray(inputs, dtype=float)
    margin = np.inf
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        z = h @ W.T + b
        margin = min(margin, float(np.min(np.abs(z))))
        h = np.maximum(z, 0.0)
    return margin


def finite_diff_grad_check(net, sample, h=1e-5, max_params=2000, rng=None):
    """Max relative error of :func:`backward` against central differences.

    ``sample`` is a ``(t, y, x, target)`` minibatch. Networks with more than
    ``max_params`` parameters are checked on a random subset.
    """
    if not h > 0:
        raise ConfigError(f"finite-difference step must be positive, got {h}")
    t, y, x, target = sample
    grads = backward(net, t, y, x, target)
    inputs = build_inputs(net, t, y, x)
    target = np.atleast_2d(np.asarray(target, dtype=float))

    def loss_at(params):
        out = kernels.forward(params[:len(net.weights)], params[len(net.weights):],
                              inputs, net.bound)
        r = out - target
        return np.sum(r * r) / r.shape[0]

    params = [p.copy() for p in net.params]
    index = [(k, i) for k, p in enumerate(params) for i in range(p.size)]
    if len(index) > max_params:
        rng = np.random.default_rng(0) if rng is None else rng
        pick = rng.choice(len(index), size=max_params, replace=False)
        index = [index[i] for i in np.sort(pick)]
    worst = 0.0
    for k, i in index:
        flat = params[k].reshape(-1)
        orig = flat[i]
        flat[i] = orig + h
        up = loss_at(params)
        flat[i] = orig - h
        down = loss_at(params)
        flat[i] = orig
        fd = (up - down) / (2 * h)
        an = grads.params[k].reshape(-1)[i]
        worst = max(worst, abs(an - fd) / (abs(fd) + 1e-12))
    return worst
