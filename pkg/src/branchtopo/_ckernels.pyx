# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled point kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, sqrt

cnp.import_array()


cdef inline double _sqdist(const double[:, ::1] a, Py_ssize_t i,
                           const double[:, ::1] b, Py_ssize_t j) noexcept nogil:
    cdef double d = 0.0, diff
    cdef Py_ssize_t t
    for t in range(a.shape[1]):
        diff = a[i, t] - b[j, t]
        d += diff * diff
    return d


def fps_sorted(const double[:, ::1] coords, Py_ssize_t k):
    cdef Py_ssize_t n = coords.shape[0], i, p, cur = 0, best
    cdef double d, bestd
    out_arr = np.empty(k, dtype=np.int64)
    mind_arr = np.full(n, INFINITY)
    cdef cnp.int64_t[::1] out = out_arr
    cdef double[::1] mind = mind_arr
    with nogil:
        for i in range(k):
            out[i] = cur
            best = 0
            bestd = -1.0
            for p in range(n):
                d = _sqdist(coords, p, coords, cur)
                if d < mind[p]:
                    mind[p] = d
                if mind[p] > bestd:
                    bestd = mind[p]
                    best = p
            cur = best
    return out_arr


cdef inline Py_ssize_t _insert(double[::1] bd, cnp.int64_t[::1] bi, Py_ssize_t size,
                               Py_ssize_t cap, double d, Py_ssize_t p) noexcept nogil:
    # stable insertion into a sorted bounded buffer; returns the new size
    cdef Py_ssize_t pos = size
    if size == cap:
        if d >= bd[cap - 1]:
            return size
        pos = cap - 1
    else:
        size += 1
    while pos > 0 and bd[pos - 1] > d:
        bd[pos] = bd[pos - 1]
        bi[pos] = bi[pos - 1]
        pos -= 1
    bd[pos] = d
    bi[pos] = p
    return size


def ball_query_sorted(const double[:, ::1] coords, const cnp.int64_t[::1] centers,
                      double r2, Py_ssize_t max_k):
    cdef Py_ssize_t m = centers.shape[0], n = coords.shape[0]
    cdef Py_ssize_t i, p, c, size, t, cap = max_k - 1
    cdef double d
    out_arr = np.empty((m, max_k), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef double[::1] bd = np.empty(max(cap, 1), dtype=np.float64)
    cdef cnp.int64_t[::1] bi = np.empty(max(cap, 1), dtype=np.int64)
    with nogil:
        for i in range(m):
            c = centers[i]
            size = 0
            if cap > 0:
                for p in range(n):
                    if p == c:
                        continue
                    d = _sqdist(coords, p, coords, c)
                    if d <= r2:
                        size = _insert(bd, bi, size, cap, d, p)
            out[i, 0] = c
            for t in range(cap):
                out[i, t + 1] = bi[t] if t < size else c
    return out_arr


def knn_sorted(const double[:, ::1] src, const double[:, ::1] dst, Py_ssize_t k):
    cdef Py_ssize_t m = dst.shape[0], n = src.shape[0], i, p, size
    if k > n:
        k = n
    idx_arr = np.empty((m, k), dtype=np.int64)
    d2_arr = np.empty((m, k), dtype=np.float64)
    cdef cnp.int64_t[:, ::1] idx = idx_arr
    cdef double[:, ::1] d2 = d2_arr
    cdef double d
    with nogil:
        for i in range(m):
            size = 0
            for p in range(n):
                d = _sqdist(src, p, dst, i)
                size = _insert(d2[i], idx[i], size, k, d, p)
    return idx_arr, d2_arr


def scatter_add_rows(out_, const cnp.int64_t[::1] idx, vals_):
    if out_.dtype == np.float32:
        _scatter_f32(out_, idx, vals_)
    else:
        _scatter_f64(out_, idx, vals_)
    return out_


cdef void _scatter_f64(double[:, ::1] out, const cnp.int64_t[::1] idx,
                       const double[:, ::1] vals) noexcept:
    cdef Py_ssize_t i, j, r
    with nogil:
        for i in range(idx.shape[0]):
            r = idx[i]
            for j in range(vals.shape[1]):
                out[r, j] += vals[i, j]


cdef void _scatter_f32(float[:, ::1] out, const cnp.int64_t[::1] idx,
                       const float[:, ::1] vals) noexcept:
    cdef Py_ssize_t i, j, r
    with nogil:
        for i in range(idx.shape[0]):
            r = idx[i]
            for j in range(vals.shape[1]):
                out[r, j] += vals[i, j]


ctypedef fused real:
    float
    double


def _bn_forward(const real[:, ::1] x, const real[::1] gamma, const real[::1] beta,
                double eps, real[:, ::1] out, real[:, ::1] xhat,
                double[::1] mean, double[::1] var, double[::1] inv):
    cdef Py_ssize_t m = x.shape[0], c = x.shape[1], i, j
    cdef double d, xh
    with nogil:
        for j in range(c):
            mean[j] = 0.0
            var[j] = 0.0
        for i in range(m):
            for j in range(c):
                mean[j] += x[i, j]
        for j in range(c):
            mean[j] /= m
        for i in range(m):
            for j in range(c):
                d = x[i, j] - mean[j]
                var[j] += d * d
        for j in range(c):
            var[j] /= m
            inv[j] = 1.0 / sqrt(var[j] + eps)
        for i in range(m):
            for j in range(c):
                xh = (x[i, j] - mean[j]) * inv[j]
                xhat[i, j] = <real>xh
                out[i, j] = <real>(xh * gamma[j] + beta[j])


def bn_forward_train(x, gamma, beta, double eps):
    """Batch statistics, normalized input and affine output in three passes."""
    m, c = x.shape
    out = np.empty_like(x)
    xhat = np.empty_like(x)
    mean = np.empty(c)
    var = np.empty(c)
    inv = np.empty(c)
    _bn_forward(x, gamma, beta, eps, out, xhat, mean, var, inv)
    return out, xhat, mean, var, inv


def _bn_backward(const real[:, ::1] g, const real[:, ::1] xhat, const real[::1] gamma,
                 const double[::1] inv, bint train, real[:, ::1] dx,
                 double[::1] dgamma, double[::1] dbeta):
    cdef Py_ssize_t m = g.shape[0], c = g.shape[1], i, j
    cdef double gij
    with nogil:
        for j in range(c):
            dgamma[j] = 0.0
            dbeta[j] = 0.0
        for i in range(m):
            for j in range(c):
                gij = g[i, j]
                dbeta[j] += gij
                dgamma[j] += gij * xhat[i, j]
        if train:
            for i in range(m):
                for j in range(c):
                    dx[i, j] = <real>(gamma[j] * inv[j] *
                                      (g[i, j] - dbeta[j] / m - xhat[i, j] * dgamma[j] / m))
        else:
            for i in range(m):
                for j in range(c):
                    dx[i, j] = <real>(g[i, j] * gamma[j] * inv[j])


def bn_backward(g, xhat, gamma, inv, bint train):
    """Input, scale and shift gradients of batch normalization in two passes."""
    m, c = g.shape
    dx = np.empty_like(g)
    dgamma = np.empty(c)
    dbeta = np.empty(c)
    _bn_backward(g, xhat, gamma, inv, train, dx, dgamma, dbeta)
    return dx, dgamma.astype(g.dtype), dbeta.astype(g.dtype)
