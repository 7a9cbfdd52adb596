# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the dense training path.

Mirrors kernels_py exactly; see that module for the contract of each
function. Loops are written for the small matrices this engine actually
runs (batch x width up to a few hundred), where avoiding temporary
allocations and dispatch overhead matters more than blocking.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()


def gemm(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], k = a.shape[1], m = b.shape[1]
    out_arr = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, t
    cdef double aval
    for i in range(n):
        for t in range(k):
            aval = a[i, t]
            if aval == 0.0:
                continue
            for j in range(m):
                out[i, j] += aval * b[t, j]
    return out_arr


def gemm_nt(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], k = a.shape[1], m = b.shape[0]
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, t
    cdef double acc
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[j, t]
            out[i, j] = acc
    return out_arr


def gemm_tn(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], k = a.shape[1], m = b.shape[1]
    out_arr = np.zeros((k, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, t
    cdef double aval
    for i in range(n):
        for t in range(k):
            aval = a[i, t]
            if aval == 0.0:
                continue
            for j in range(m):
                out[t, j] += aval * b[i, j]
    return out_arr


def add_bias(double[:, ::1] x, double[::1] b):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1]
    out_arr = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(k):
            out[i, j] = x[i, j] + b[j]
    return out_arr


def sum_rows(double[:, ::1] g):
    cdef Py_ssize_t n = g.shape[0], k = g.shape[1]
    out_arr = np.zeros(k, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(k):
            out[j] += g[i, j]
    return out_arr


def relu_fwd(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1]
    out_arr = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(k):
            out[i, j] = x[i, j] if x[i, j] > 0.0 else 0.0
    return out_arr


def relu_bwd(double[:, ::1] x, double[:, ::1] g):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1]
    out_arr = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(k):
            out[i, j] = g[i, j] if x[i, j] > 0.0 else 0.0
    return out_arr


def log_softmax_fwd(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double m, s
    for i in range(n):
        m = x[i, 0]
        for j in range(1, c):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(c):
            s += exp(x[i, j] - m)
        s = log(s)
        for j in range(c):
            out[i, j] = x[i, j] - m - s
    return out_arr


def log_softmax_bwd(double[:, ::1] y, double[:, ::1] g):
    cdef Py_ssize_t n = y.shape[0], c = y.shape[1]
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double gsum
    for i in range(n):
        gsum = 0.0
        for j in range(c):
            gsum += g[i, j]
        for j in range(c):
            out[i, j] = g[i, j] - exp(y[i, j]) * gsum
    return out_arr


def l2norm_fwd(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1]
    out_arr = np.zeros((n, k), dtype=np.float64)
    norms_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] norms = norms_arr
    cdef Py_ssize_t i, j
    cdef double s
    for i in range(n):
        s = 0.0
        for j in range(k):
            s += x[i, j] * x[i, j]
        s = sqrt(s)
        norms[i] = s
        if s > 0.0:
            for j in range(k):
                out[i, j] = x[i, j] / s
    return out_arr, norms_arr


def l2norm_bwd(double[:, ::1] y, double[::1] norms, double[:, ::1] g):
    cdef Py_ssize_t n = y.shape[0], k = y.shape[1]
    out_arr = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(k):
            dot += g[i, j] * y[i, j]
        for j in range(k):
            out[i, j] = (g[i, j] - y[i, j] * dot) / norms[i]
    return out_arr
