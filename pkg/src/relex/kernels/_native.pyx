# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the training hot spots.

Same signatures and semantics as ``relex.kernels.pure``; loops are fused so
the small-model training path avoids numpy temporary allocations. Math is
done in double precision internally regardless of the array dtype.
"""

import numpy as np

cimport cython
from libc.math cimport exp, pow, sqrt, tanh

BACKEND = "native"

ctypedef fused floating:
    float
    double

cdef double _GELU_C = 0.7978845608028654
cdef double _GELU_A = 0.044715


cdef inline object _empty_like_2d(floating[:, ::1] x, Py_ssize_t n, Py_ssize_t d):
    if floating is float:
        return np.empty((n, d), dtype=np.float32)
    else:
        return np.empty((n, d), dtype=np.float64)


cdef inline object _empty_like_1d(floating[:, ::1] x, Py_ssize_t n):
    if floating is float:
        return np.empty(n, dtype=np.float32)
    else:
        return np.empty(n, dtype=np.float64)


def layer_norm_forward(floating[:, ::1] x, floating[::1] gamma,
                       floating[::1] beta, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double mu, var, diff, rs
    y_np = _empty_like_2d(x, n, d)
    mean_np = _empty_like_1d(x, n)
    rstd_np = _empty_like_1d(x, n)
    cdef floating[:, ::1] y = y_np
    cdef floating[::1] mean = mean_np
    cdef floating[::1] rstd = rstd_np
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            diff = x[i, j] - mu
            var += diff * diff
        var /= d
        rs = 1.0 / sqrt(var + eps)
        mean[i] = <floating> mu
        rstd[i] = <floating> rs
        for j in range(d):
            y[i, j] = <floating> ((x[i, j] - mu) * rs * gamma[j] + beta[j])
    return y_np, mean_np, rstd_np


def layer_norm_backward(floating[:, ::1] dy, floating[:, ::1] x,
                        floating[::1] gamma, floating[::1] mean,
                        floating[::1] rstd):
    cdef Py_ssize_t n = dy.shape[0], d = dy.shape[1], i, j
    cdef double m1, m2, xhat, dxh
    dx_np = _empty_like_2d(dy, n, d)
    if floating is float:
        dgamma_np = np.zeros(d, dtype=np.float32)
        dbeta_np = np.zeros(d, dtype=np.float32)
    else:
        dgamma_np = np.zeros(d, dtype=np.float64)
        dbeta_np = np.zeros(d, dtype=np.float64)
    cdef floating[:, ::1] dx = dx_np
    cdef floating[::1] dgamma = dgamma_np
    cdef floating[::1] dbeta = dbeta_np
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xhat = (x[i, j] - mean[i]) * rstd[i]
            dxh = dy[i, j] * gamma[j]
            dgamma[j] += <floating> (dy[i, j] * xhat)
            dbeta[j] += dy[i, j]
            m1 += dxh
            m2 += dxh * xhat
        m1 /= d
        m2 /= d
        for j in range(d):
            xhat = (x[i, j] - mean[i]) * rstd[i]
            dxh = dy[i, j] * gamma[j]
            dx[i, j] = <floating> (rstd[i] * (dxh - m1 - xhat * m2))
    return dx_np, dgamma_np, dbeta_np


def softmax_rows(floating[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double mx, total, e
    y_np = _empty_like_2d(x, n, d)
    cdef floating[:, ::1] y = y_np
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, d):
            if x[i, j] > mx:
                mx = x[i, j]
        total = 0.0
        for j in range(d):
            e = exp(x[i, j] - mx)
            y[i, j] = <floating> e
            total += e
        for j in range(d):
            y[i, j] = <floating> (y[i, j] / total)
    return y_np


def softmax_backward_rows(floating[:, ::1] y, floating[:, ::1] dy):
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1], i, j
    cdef double inner
    dx_np = _empty_like_2d(y, n, d)
    cdef floating[:, ::1] dx = dx_np
    for i in range(n):
        inner = 0.0
        for j in range(d):
            inner += dy[i, j] * y[i, j]
        for j in range(d):
            dx[i, j] = <floating> (y[i, j] * (dy[i, j] - inner))
    return dx_np


def gelu_forward(floating[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double v, u
    y_np = _empty_like_2d(x, n, d)
    cdef floating[:, ::1] y = y_np
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            u = _GELU_C * (v + _GELU_A * v * v * v)
            y[i, j] = <floating> (0.5 * v * (1.0 + tanh(u)))
    return y_np


def gelu_backward(floating[:, ::1] x, floating[:, ::1] dy):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double v, u, t, du
    dx_np = _empty_like_2d(x, n, d)
    cdef floating[:, ::1] dx = dx_np
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            u = _GELU_C * (v + _GELU_A * v * v * v)
            t = tanh(u)
            du = _GELU_C * (1.0 + 3.0 * _GELU_A * v * v)
            dx[i, j] = <floating> (dy[i, j] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du))
    return dx_np


def adam_update(floating[::1] param, floating[::1] grad, floating[::1] m,
                floating[::1] v, double lr, double beta1, double beta2,
                double eps, long step):
    cdef Py_ssize_t n = param.shape[0], i
    cdef double bc1 = 1.0 - pow(beta1, step)
    cdef double bc2 = 1.0 - pow(beta2, step)
    cdef double g, mi, vi
    for i in range(n):
        g = grad[i]
        mi = beta1 * m[i] + (1.0 - beta1) * g
        vi = beta2 * v[i] + (1.0 - beta2) * g * g
        m[i] = <floating> mi
        v[i] = <floating> vi
        param[i] -= <floating> (lr * (mi / bc1) / (sqrt(vi / bc2) + eps))
