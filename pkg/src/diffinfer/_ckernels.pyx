# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels mirroring ``_pykernels`` (same signatures, same math).

Matrix products go through BLAS ``dgemm``; everything else is fused C loops
so a training epoch or a full reverse-time integration runs without
returning to the interpreter.
"""
import numpy as np

from libc.math cimport sqrt
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_blas cimport dgemm

BACKEND = "cython"


cdef double* _ptr(arr):
    cdef double[::1] flat = arr.reshape(-1)
    return &flat[0]


cdef struct Net:
    int L
    int* dims
    double** W
    double** b


cdef Net _net_new(list weights, list biases):
    cdef Net net
    cdef int i
    net.L = len(weights)
    net.dims = <int*> malloc((net.L + 1) * sizeof(int))
    net.W = <double**> malloc(net.L * sizeof(double*))
    net.b = <double**> malloc(net.L * sizeof(double*))
    net.dims[0] = weights[0].shape[1]
    for i in range(net.L):
        net.dims[i + 1] = weights[i].shape[0]
        net.W[i] = _ptr(weights[i])
        net.b[i] = _ptr(biases[i])
    return net


cdef void _net_free(Net* net):
    free(net.dims)
    free(net.W)
    free(net.b)


cdef inline void _gemm_fwd(double* W, double* h, double* z, int B, int n_in,
                           int n_out) noexcept nogil:
    # z (B, n_out) = h (B, n_in) @ W.T with W (n_out, n_in), all row-major
    cdef char ta = b'T'
    cdef char tb = b'N'
    cdef double one = 1.0
    cdef double zero = 0.0
    dgemm(&ta, &tb, &n_out, &B, &n_in, &one, W, &n_in, h, &n_in, &zero, z,
          &n_out)


cdef inline void _gemm_gw(double* h, double* g, double* gW, int B, int n_in,
                          int n_out) noexcept nogil:
    # gW (n_out, n_in) = g.T @ h
    cdef char ta = b'N'
    cdef char tb = b'T'
    cdef double one = 1.0
    cdef double zero = 0.0
    dgemm(&ta, &tb, &n_in, &n_out, &B, &one, h, &n_in, g, &n_out, &zero, gW,
          &n_in)


cdef inline void _gemm_back(double* W, double* g, double* dh, int B, int n_in,
                            int n_out) noexcept nogil:
    # dh (B, n_in) = g (B, n_out) @ W (n_out, n_in)
    cdef char ta = b'N'
    cdef char tb = b'N'
    cdef double one = 1.0
    cdef double zero = 0.0
    dgemm(&ta, &tb, &n_in, &B, &n_out, &one, W, &n_in, g, &n_out, &zero, dh,
          &n_in)


cdef void _forward(Net* net, double* inp, double** acts, int B,
                   double bound) noexcept nogil:
    """Fill acts[1..L]; acts[0] must already point at the input."""
    cdef int i, r, j, n_out
    cdef double v, nrm
    cdef double* z
    cdef double* bias
    acts[0] = inp
    for i in range(net.L):
        n_out = net.dims[i + 1]
        z = acts[i + 1]
        _gemm_fwd(net.W[i], acts[i], z, B, net.dims[i], n_out)
        bias = net.b[i]
        if i < net.L - 1:
            for r in range(B):
                for j in range(n_out):
                    v = z[r * n_out + j] + bias[j]
                    z[r * n_out + j] = v if v > 0.0 else 0.0
        else:
            for r in range(B):
                for j in range(n_out):
                    z[r * n_out + j] = z[r * n_out + j] + bias[j]
    if bound > 0.0:
        n_out = net.dims[net.L]
        z = acts[net.L]
        for r in range(B):
            nrm = 0.0
            for j in range(n_out):
                nrm += z[r * n_out + j] * z[r * n_out + j]
            nrm = sqrt(nrm)
            if nrm > bound:
                for j in range(n_out):
                    z[r * n_out + j] = z[r * n_out + j] * (bound / nrm)


cdef double _loss_grad(Net* net, double* inp, double* target, int B,
                       double bound, double** acts, double* g, double* dh,
                       double** gW, double** gb) noexcept nogil:
    cdef int i, r, j, n_out, n_in
    cdef double loss = 0.0
    cdef double nrm, proj, d, k
    cdef double* out
    cdef double* tmp
    cdef double* a
    _forward(net, inp, acts, B, 0.0)
    n_out = net.dims[net.L]
    out = acts[net.L]
    for r in range(B):
        nrm = 0.0
        if bound > 0.0:
            for j in range(n_out):
                nrm += out[r * n_out + j] * out[r * n_out + j]
            nrm = sqrt(nrm)
        if bound > 0.0 and nrm > bound:
            # residual of the rescaled output, then the chain rule through u -> K u/|u|
            proj = 0.0
            for j in range(n_out):
                d = out[r * n_out + j] * (bound / nrm) - target[r * n_out + j]
                loss += d * d
                g[r * n_out + j] = 2.0 * d / B
            for j in range(n_out):
                proj += g[r * n_out + j] * (out[r * n_out + j] / nrm)
            k = bound / nrm
            for j in range(n_out):
                g[r * n_out + j] = k * (g[r * n_out + j]
                                        - proj * (out[r * n_out + j] / nrm))
        else:
            for j in range(n_out):
                d = out[r * n_out + j] - target[r * n_out + j]
                loss += d * d
                g[r * n_out + j] = 2.0 * d / B
    for i in range(net.L - 1, -1, -1):
        n_out = net.dims[i + 1]
        n_in = net.dims[i]
        _gemm_gw(acts[i], g, gW[i], B, n_in, n_out)
        for j in range(n_out):
            gb[i][j] = 0.0
        for r in range(B):
            for j in range(n_out):
                gb[i][j] += g[r * n_out + j]
        if i > 0:
            _gemm_back(net.W[i], g, dh, B, n_in, n_out)
            a = acts[i]
            for r in range(B * n_in):
                if not a[r] > 0.0:
                    dh[r] = 0.0
            tmp = g
            g = dh
            dh = tmp
    return loss / B


cdef inline void _adam(double* p, double* g, double* m, double* v, Py_ssize_t n,
                       double lr, double b1, double b2, double c1, double c2,
                       double eps) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(n):
        m[i] = m[i] * b1 + (1.0 - b1) * g[i]
        v[i] = v[i] * b2 + ((1.0 - b2) * g[i]) * g[i]
        p[i] -= lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps)


cdef class _Work:
    """Scratch buffers for one batch size."""
    cdef list arrays
    cdef double** acts
    cdef double* g
    cdef double* dh

    def __cinit__(self):
        self.acts = NULL

    cdef void setup(self, Net* net, int B):
        cdef int i, widest = 0
        self.arrays = []
        self.acts = <double**> malloc((net.L + 1) * sizeof(double*))
        for i in range(net.L + 1):
            if net.dims[i] > widest:
                widest = net.dims[i]
        for i in range(1, net.L + 1):
            arr = np.empty(B * net.dims[i])
            self.arrays.append(arr)
            self.acts[i] = _ptr(arr)
        for _ in range(2):
            self.arrays.append(np.empty(B * widest))
        self.g = _ptr(self.arrays[net.L])
        self.dh = _ptr(self.arrays[net.L + 1])

    def __dealloc__(self):
        if self.acts != NULL:
            free(self.acts)


cdef _Work _work(Net* net, int B):
    cdef _Work w = _Work()
    w.setup(net, B)
    return w


def forward(list weights, list biases, inp, double output_bound=0.0):
    inp = np.ascontiguousarray(inp, dtype=np.float64)
    cdef Net net = _net_new(weights, biases)
    cdef int B = inp.shape[0]
    cdef _Work work = _work(&net, B)
    try:
        _forward(&net, _ptr(inp), work.acts, B, output_bound)
        return work.arrays[net.L - 1].reshape(B, net.dims[net.L]).copy()
    finally:
        _net_free(&net)


def loss_and_grad(list weights, list biases, inp, target,
                  double output_bound=0.0):
    inp = np.ascontiguousarray(inp, dtype=np.float64)
    target = np.ascontiguousarray(target, dtype=np.float64)
    cdef Net net = _net_new(weights, biases)
    cdef int B = inp.shape[0]
    cdef int i
    cdef _Work work = _work(&net, B)
    gW = [np.empty_like(W) for W in weights]
    gb = [np.empty_like(b) for b in biases]
    cdef double** pgw = <double**> malloc(net.L * sizeof(double*))
    cdef double** pgb = <double**> malloc(net.L * sizeof(double*))
    cdef double loss
    try:
        for i in range(net.L):
            pgw[i] = _ptr(gW[i])
            pgb[i] = _ptr(gb[i])
        loss = _loss_grad(&net, _ptr(inp), _ptr(target), B, output_bound,
                          work.acts, work.g, work.dh, pgw, pgb)
        return loss, gW, gb
    finally:
        free(pgw)
        free(pgb)
        _net_free(&net)


def adam_update(list params, list grads, list m1, list m2, long step,
                double lr, double beta1, double beta2, double eps):
    cdef double c1 = 1.0 - beta1 ** step
    cdef double c2 = 1.0 - beta2 ** step
    for p, g, m, v in zip(params, grads, m1, m2):
        _adam(_ptr(p), _ptr(g), _ptr(m), _ptr(v), p.size, lr, beta1, beta2,
              c1, c2, eps)


def train_epoch(list weights, list biases, list ema_w, list ema_b, list m1,
                list m2, inputs, targets, int batch_size, long step0,
                double[::1] lrs, double beta1, double beta2, double eps,
                double ema_decay, double output_bound=0.0):
    inputs = np.ascontiguousarray(inputs, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    cdef Net net = _net_new(weights, biases)
    cdef int n = inputs.shape[0]
    cdef int d_in = inputs.shape[1]
    cdef int d_out = targets.shape[1]
    cdef int n_batches = (n + batch_size - 1) // batch_size
    cdef int n_par = 2 * net.L
    cdef int k, lo, B, i
    cdef long step
    cdef Py_ssize_t j
    cdef double c1, c2
    cdef _Work work = _work(&net, batch_size)
    params = list(weights) + list(biases)
    ema = list(ema_w) + list(ema_b)
    grads = [np.empty_like(p) for p in params]
    losses = np.empty(n_batches)
    cdef double[::1] lv = losses
    cdef double** pp = <double**> malloc(n_par * sizeof(double*))
    cdef double** pg = <double**> malloc(n_par * sizeof(double*))
    cdef double** pm = <double**> malloc(n_par * sizeof(double*))
    cdef double** pv = <double**> malloc(n_par * sizeof(double*))
    cdef double** pe = <double**> malloc(n_par * sizeof(double*))
    cdef Py_ssize_t* sizes = <Py_ssize_t*> malloc(n_par * sizeof(Py_ssize_t))
    cdef double* x0 = _ptr(inputs)
    cdef double* y0 = _ptr(targets)
    cdef double* ec
    cdef double* pc
    try:
        for i in range(n_par):
            pp[i] = _ptr(params[i])
            pg[i] = _ptr(grads[i])
            pm[i] = _ptr(m1[i])
            pv[i] = _ptr(m2[i])
            pe[i] = _ptr(ema[i])
            sizes[i] = params[i].size
        with nogil:
            for k in range(n_batches):
                lo = k * batch_size
                B = batch_size if lo + batch_size <= n else n - lo
                lv[k] = _loss_grad(&net, x0 + lo * d_in, y0 + lo * d_out, B,
                                   output_bound, work.acts, work.g, work.dh,
                                   pg, pg + net.L)
                step = step0 + k + 1
                c1 = 1.0 - beta1 ** step
                c2 = 1.0 - beta2 ** step
                for i in range(n_par):
                    _adam(pp[i], pg[i], pm[i], pv[i], sizes[i], lrs[k], beta1,
                          beta2, c1, c2, eps)
                if ema_decay > 0.0:
                    for i in range(n_par):
                        ec = pe[i]
                        pc = pp[i]
                        for j in range(sizes[i]):
                            ec[j] = ec[j] * ema_decay + (1.0 - ema_decay) * pc[j]
        return losses
    finally:
        free(pp)
        free(pg)
        free(pm)
        free(pv)
        free(pe)
        free(sizes)
        _net_free(&net)


def em_integrate(list weights, list biases, double[:, ::1] y, cond,
                 double[::1] times, double[::1] dts, noise,
                 double clamp=0.0, double output_bound=0.0, shift=None,
                 scale=None, double limit=np.inf):
    cond = np.ascontiguousarray(cond, dtype=np.float64)
    noise = np.ascontiguousarray(noise, dtype=np.float64)
    cdef int P = y.shape[0]
    cdef int d_y = y.shape[1]
    cdef int d_x = cond.shape[1]
    cdef int d_in = 1 + d_y + d_x
    cdef int steps = dts.shape[0]
    cdef Net net = _net_new(weights, biases)
    cdef _Work work = _work(&net, P)
    inp = np.empty((P, d_in))
    cdef double[:, ::1] iv = inp
    cdef double[:, ::1] cv = cond
    cdef double[:, :, ::1] nv = noise
    cdef double[::1] sh = np.zeros(d_y) if shift is None else np.ascontiguousarray(shift, dtype=np.float64)
    cdef double[::1] sc = np.ones(d_y) if scale is None else np.ascontiguousarray(scale, dtype=np.float64)
    cdef int k, r, j, bad = -1
    cdef double v, dt, s2, nrm, ph
    cdef double* drift
    try:
        with nogil:
            for r in range(P):
                for j in range(d_x):
                    iv[r, 1 + d_y + j] = cv[r, j]
            for k in range(steps):
                dt = dts[k]
                s2 = sqrt(2.0 * dt)
                for r in range(P):
                    iv[r, 0] = times[k]
                    for j in range(d_y):
                        v = y[r, j]
                        if clamp > 0.0:
                            if v < -clamp:
                                v = -clamp
                            elif v > clamp:
                                v = clamp
                        iv[r, 1 + j] = v
                _forward(&net, &iv[0, 0], work.acts, P, output_bound)
                drift = work.acts[net.L]
                for r in range(P):
                    nrm = 0.0
                    for j in range(d_y):
                        y[r, j] += drift[r * d_y + j] * dt + s2 * nv[k, r, j]
                        ph = y[r, j] * sc[j] + sh[j]
                        nrm += ph * ph
                    if not sqrt(nrm) <= limit:
                        bad = k
                if bad >= 0:
                    break
        return bad
    finally:
        _net_free(&net)
