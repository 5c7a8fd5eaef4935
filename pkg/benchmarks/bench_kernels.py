"""Time the compiled kernels against the numpy reference.

    python benchmarks/bench_kernels.py [--repeat 3]

Both backends are fed identical inputs; the script also reports the largest
absolute difference between their outputs.
"""
import argparse
import time

import numpy as np

from diffinfer import _pykernels
from diffinfer.nn import init_network

try:
    from diffinfer import _ckernels
except ImportError:
    _ckernels = None


def _setup(n_rows=7200, d_x=3, hidden=(32, 32, 32), seed=0):
    rng = np.random.default_rng(seed)
    net = init_network([2 + d_x, *hidden, 1], seed)
    inputs = rng.standard_normal((n_rows, 2 + d_x))
    targets = rng.standard_normal((n_rows, 1))
    return net, inputs, targets


def bench_train_epoch(mod, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        net, inputs, targets = _setup()
        ema = net.copy()
        m1 = [np.zeros_like(p) for p in net.params]
        m2 = [np.zeros_like(p) for p in net.params]
        steps = -(-len(inputs) // 256)
        lrs = np.full(steps, 1e-2)
        t0 = time.perf_counter()
        mod.train_epoch(net.weights, net.biases, ema.weights, ema.biases, m1, m2, inputs,
                        targets, 256, 0, lrs, 0.9, 0.999, 1e-8, 0.999, 0.0)
        best = min(best, time.perf_counter() - t0)
        out = np.concatenate([w.ravel() for w in net.weights])
    return best, out


def bench_em(mod, repeat, paths=100, N=200):
    net, _, _ = _setup()
    rng = np.random.default_rng(1)
    cond = np.ascontiguousarray(np.tile(rng.standard_normal(3), (paths, 1)))
    times = np.linspace(3.0, 0.01 + 2.99 / N, N)
    dts = np.full(N, 2.99 / N)
    noise = rng.standard_normal((N, paths, 1))
    y0 = rng.standard_normal((paths, 1))
    best, out = np.inf, None
    for _ in range(repeat):
        y = y0.copy()
        t0 = time.perf_counter()
        mod.em_integrate(net.weights, net.biases, y, cond, times, dts, noise)
        best = min(best, time.perf_counter() - t0)
        out = y
    return best, out


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    if _ckernels is None:
        print("compiled backend not built; only the python timings are shown")
    for name, fn in [("train_epoch (7200 rows, batch 256)", bench_train_epoch),
                     ("em_integrate (100 paths, 200 steps)", bench_em)]:
        t_py, o_py = fn(_pykernels, args.repeat)
        line = f"{name:40s} python {t_py * 1e3:8.2f} ms"
        if _ckernels is not None:
            t_c, o_c = fn(_ckernels, args.repeat)
            line += (f"   cython {t_c * 1e3:8.2f} ms   speedup {t_py / t_c:5.1f}x"
                     f"   max|diff| {np.max(np.abs(o_py - o_c)):.2e}")
        print(line)


if __name__ == "__main__":
    main()
