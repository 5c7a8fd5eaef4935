"""Pure-numpy reference kernels.

These define the numerical contract that the compiled ``_ckernels`` module
must reproduce. Weights are row-major ``(out, in)`` float64 arrays and
activations are ``(batch, features)``.
"""
import numpy as np

BACKEND = "python"


def _bound_rows(out, bound):
    """Radially rescale rows of ``out`` so their norm is at most ``bound``."""
    norms = np.sqrt(np.sum(out * out, axis=1, keepdims=True))
    scale = np.where(norms > bound, bound / np.where(norms > 0, norms, 1.0), 1.0)
    return out * scale, norms


def forward(weights, biases, inp, output_bound=0.0):
    h = inp
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        h = h @ W.T + b
        if i < last:
            h = np.maximum(h, 0.0)
    if output_bound > 0:
        h, _ = _bound_rows(h, output_bound)
    return h


def loss_and_grad(weights, biases, inp, target, output_bound=0.0):
    """Mean over the batch of the squared residual norm, and its gradients."""
    acts = [inp]
    h = inp
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        h = h @ W.T + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    raw = acts[-1]
    B = inp.shape[0]
    if output_bound > 0:
        out, norms = _bound_rows(raw, output_bound)
    else:
        out = raw
    resid = out - target
    loss = float(np.sum(resid * resid) / B)
    g = 2.0 * resid / B
    if output_bound > 0:
        # d(K u / |u|) applied to g: (K/|u|) (g - (g.u_hat) u_hat) on clipped rows
        over = (norms > output_bound)[:, 0]
        if np.any(over):
            u = raw[over] / norms[over]
            gr = g[over]
            proj = np.sum(gr * u, axis=1, keepdims=True)
            g = g.copy()
            g[over] = (output_bound / norms[over]) * (gr - proj * u)
    gW = [None] * len(weights)
    gb = [None] * len(weights)
    for i in range(last, -1, -1):
        gW[i] = g.T @ acts[i]
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ weights[i]) * (acts[i] > 0)
    return loss, gW, gb


def adam_update(params, grads, m1, m2, step, lr, beta1, beta2, eps):
    """In-place bias-corrected Adam update; ``step`` is the 1-based count."""
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for p, g, m, v in zip(params, grads, m1, m2):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def train_epoch(weights, biases, ema_w, ema_b, m1, m2, inputs, targets,
                batch_size, step0, lrs, beta1, beta2, eps, ema_decay,
                output_bound=0.0):
    """Run consecutive minibatches over ``inputs`` in row order.

    ``lrs[k]`` is the learning rate of the k-th minibatch; ``step0`` is the
    Adam step count before the epoch. Returns per-minibatch losses.
    """
    params = list(weights) + list(biases)
    ema = list(ema_w) + list(ema_b)
    n = inputs.shape[0]
    n_batches = (n + batch_size - 1) // batch_size
    losses = np.empty(n_batches)
    for k in range(n_batches):
        lo = k * batch_size
        hi = min(lo + batch_size, n)
        loss, gW, gb = loss_and_grad(weights, biases, inputs[lo:hi],
                                     targets[lo:hi], output_bound)
        losses[k] = loss
        adam_update(params, gW + gb, m1, m2, step0 + k + 1, lrs[k],
                    beta1, beta2, eps)
        if ema_decay > 0:
            for e, p in zip(ema, params):
                e *= ema_decay
                e += (1.0 - ema_decay) * p
    return losses


def em_integrate(weights, biases, y, cond, times, dts, noise, clamp=0.0,
                 output_bound=0.0, shift=None, scale=None, limit=np.inf):
    """Explicit Euler-Maruyama with the network drift frozen at each left node.

    ``y`` is ``(paths, d_y)`` and is updated in place. ``times[k]`` is the
    network's time input at step k and ``noise`` is ``(steps, paths, d_y)``.
    Returns -1, or the first step index whose state is non-finite or whose
    de-standardized norm exceeds ``limit``.
    """
    P, d_y = y.shape
    inp = np.empty((P, 1 + d_y + cond.shape[1]))
    inp[:, 1 + d_y:] = cond
    shift = np.zeros(d_y) if shift is None else shift
    scale = np.ones(d_y) if scale is None else scale
    for k in range(len(dts)):
        inp[:, 0] = times[k]
        if clamp > 0:
            inp[:, 1:1 + d_y] = np.clip(y, -clamp, clamp)
        else:
            inp[:, 1:1 + d_y] = y
        drift = forward(weights, biases, inp, output_bound)
        y += drift * dts[k] + np.sqrt(2.0 * dts[k]) * noise[k]
        phys = y * scale + shift
        norms = np.sqrt(np.sum(phys * phys, axis=1))
        if not np.all(norms <= limit):
            return k
    return -1
