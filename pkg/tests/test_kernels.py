import os
import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

from diffinfer import _pykernels as py
from diffinfer.nn import init_network

ck = pytest.importorskip("diffinfer._ckernels")


def _net(seed=0, dims=(5, 16, 16, 1)):
    net = init_network(list(dims), seed)
    rng = np.random.default_rng(seed)
    for b in net.biases:
        b[:] = rng.normal(scale=0.1, size=b.shape)
    return net


def _copy(arrs):
    return [a.copy() for a in arrs]


@pytest.mark.parametrize("bound", [0.0, 0.3])
def test_forward_and_grad_agree(bound):
    net = _net()
    rng = np.random.default_rng(1)
    inp = rng.normal(size=(37, 5))
    tgt = rng.normal(size=(37, 1))
    assert_allclose(ck.forward(net.weights, net.biases, inp, bound),
                    py.forward(net.weights, net.biases, inp, bound), rtol=1e-12, atol=1e-14)
    lc, gwc, gbc = ck.loss_and_grad(net.weights, net.biases, inp, tgt, bound)
    lp, gwp, gbp = py.loss_and_grad(net.weights, net.biases, inp, tgt, bound)
    assert_allclose(lc, lp, rtol=1e-12)
    for a, b in zip(gwc + gbc, gwp + gbp):
        assert_allclose(a, b, rtol=1e-10, atol=1e-13)


def test_adam_update_agrees():
    net = _net()
    rng = np.random.default_rng(2)
    grads = [rng.normal(size=p.shape) for p in net.params]
    pa, pb = _copy(net.params), _copy(net.params)
    m1a, m2a = [np.zeros_like(p) for p in pa], [np.zeros_like(p) for p in pa]
    m1b, m2b = _copy(m1a), _copy(m2a)
    for step in (1, 2, 3):
        ck.adam_update(pa, grads, m1a, m2a, step, 1e-2, 0.9, 0.999, 1e-8)
        py.adam_update(pb, grads, m1b, m2b, step, 1e-2, 0.9, 0.999, 1e-8)
    for a, b in zip(pa + m1a + m2a, pb + m1b + m2b):
        assert_allclose(a, b, rtol=1e-13, atol=1e-15)


def test_train_epoch_agrees():
    rng = np.random.default_rng(3)
    inp = rng.normal(size=(1000, 5))
    tgt = rng.normal(size=(1000, 1))
    out = []
    for mod in (ck, py):
        net = _net(4)
        ema = net.copy()
        m1 = [np.zeros_like(p) for p in net.params]
        m2 = [np.zeros_like(p) for p in net.params]
        lrs = np.linspace(1e-2, 1e-3, 4)
        losses = mod.train_epoch(net.weights, net.biases, ema.weights, ema.biases, m1, m2, inp,
                                 tgt, 256, 0, lrs, 0.9, 0.999, 1e-8, 0.99, 0.0)
        out.append((np.asarray(losses), net.params, ema.params))
    assert_allclose(out[0][0], out[1][0], rtol=1e-10)
    for a, b in zip(out[0][1] + out[0][2], out[1][1] + out[1][2]):
        assert_allclose(a, b, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("clamp,bound", [(0.0, 0.0), (1.5, 2.0)])
def test_em_integrate_agrees(clamp, bound):
    net = _net(5)
    rng = np.random.default_rng(4)
    cond = np.ascontiguousarray(np.tile(rng.normal(size=3), (50, 1)))
    N = 40
    times = np.linspace(3.0, 0.1, N)
    dts = np.full(N, 0.07)
    noise = rng.normal(size=(N, 50, 1))
    y0 = rng.normal(size=(50, 1))
    ya, yb = y0.copy(), y0.copy()
    ra = ck.em_integrate(net.weights, net.biases, ya, cond, times, dts, noise, clamp, bound,
                         np.array([0.3]), np.array([2.0]), 1e6)
    rb = py.em_integrate(net.weights, net.biases, yb, cond, times, dts, noise, clamp, bound,
                         np.array([0.3]), np.array([2.0]), 1e6)
    assert ra == rb == -1
    assert_allclose(ya, yb, rtol=1e-11, atol=1e-12)


def test_em_integrate_flags_same_step():
    # linear drift 3y grows without bound
    W = [np.array([[0.0, 3.0, 0.0, 0.0, 0.0]])]
    b = [np.zeros(1)]
    rng = np.random.default_rng(5)
    N = 60
    times = np.linspace(3.0, 0.1, N)
    dts = np.full(N, 0.2)
    noise = rng.normal(size=(N, 10, 1))
    ya, yb = np.ones((10, 1)), np.ones((10, 1))
    ra = ck.em_integrate(W, b, ya, np.zeros((10, 3)), times, dts, noise, limit=50.0)
    rb = py.em_integrate(W, b, yb, np.zeros((10, 3)), times, dts, noise, limit=50.0)
    assert ra >= 0
    assert ra == rb


def test_environment_forces_python_backend():
    env = dict(os.environ, DIFFINFER_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "import diffinfer; print(diffinfer.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"
