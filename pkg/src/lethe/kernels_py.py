"""Reference kernels, written with plain numpy.

This module and the compiled `_kernels` extension expose the same eleven
functions; `lethe.backend` picks one implementation at import time. All
kernels take and return C-contiguous float64 arrays and are pure functions.
"""

import numpy as np


def gemm(a, b):
    """a @ b for 2-D operands."""
    return np.ascontiguousarray(a @ b)


def gemm_nt(a, b):
    """a @ b.T for 2-D operands."""
    return np.ascontiguousarray(a @ b.T)


def gemm_tn(a, b):
    """a.T @ b for 2-D operands."""
    return np.ascontiguousarray(a.T @ b)


def add_bias(x, b):
    """Row-wise bias add: x[i, j] + b[j]."""
    return x + b[None, :]


def sum_rows(g):
    """Column sums, the bias gradient."""
    return np.ascontiguousarray(g.sum(axis=0))


def relu_fwd(x):
    return np.maximum(x, 0.0)


def relu_bwd(x, g):
    # subgradient at exactly 0 is 0, hence the strict inequality
    return np.where(x > 0.0, g, 0.0)


def log_softmax_fwd(x):
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def log_softmax_bwd(y, g):
    """Backward given the forward output y = log_softmax(x)."""
    return g - np.exp(y) * g.sum(axis=1, keepdims=True)


def l2norm_fwd(x):
    """Row-normalize x; returns (normalized, row_norms).

    Zero-norm rows are returned as zeros with norm 0.0; the caller decides
    whether that is an error (the tensor layer raises).
    """
    norms = np.sqrt((x * x).sum(axis=1))
    out = np.zeros_like(x)
    nz = norms > 0.0
    out[nz] = x[nz] / norms[nz, None]
    return out, norms


def l2norm_bwd(y, norms, g):
    """Backward for row normalization given forward output and row norms."""
    dots = (g * y).sum(axis=1, keepdims=True)
    return (g - y * dots) / norms[:, None]
