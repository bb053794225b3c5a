"""Pure numpy implementations of the training hot-spot kernels.

The compiled backend in ``_native.pyx`` mirrors these signatures exactly;
``relex.kernels`` picks one of the two at import time. Every function accepts
C-contiguous float32 or float64 arrays and is deterministic.
"""

import numpy as np

BACKEND = "pure"

_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def layer_norm_forward(x, gamma, beta, eps):
    """Normalize each row of ``x`` (N, D); returns (y, mean, rstd)."""
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    return xhat * gamma + beta, mean, rstd


def layer_norm_backward(dy, x, gamma, mean, rstd):
    """Gradients of layer_norm_forward; returns (dx, dgamma, dbeta)."""
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=1)
    m2 = (dxhat * xhat).mean(axis=1)
    dx = rstd[:, None] * (dxhat - m1[:, None] - xhat * m2[:, None])
    return dx, dgamma, dbeta


def softmax_rows(x):
    """Row-wise softmax of a 2-D array, stabilised by max subtraction."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward_rows(y, dy):
    """Gradient through softmax_rows given its output ``y``."""
    inner = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - inner)


def gelu_forward(x):
    """tanh-approximation GELU, applied elementwise."""
    u = _GELU_C * (x + _GELU_A * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_backward(x, dy):
    """Gradient of gelu_forward with respect to its input."""
    u = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, step):
    """One bias-corrected Adam update, in place on param/m/v."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    param -= lr * mhat / (np.sqrt(vhat) + eps)
