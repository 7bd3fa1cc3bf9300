"""Pure-numpy reference implementations of the hot kernels.

Semantics here are the contract; the numba backend must match these within
floating-point reassociation error. All arrays are float64, C-contiguous.
"""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def attention_forward(q, k, v):
    """Scaled dot-product attention over heads.

    q: (H, Lq, Dh), k/v: (H, Lk, Dh). Returns (out, probs) with
    out (H, Lq, Dh) and probs (H, Lq, Lk) kept for the backward pass.
    """
    dh = q.shape[-1]
    s = np.matmul(q, k.transpose(0, 2, 1)) / np.sqrt(dh)
    s -= s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    out = np.matmul(p, v)
    return out, p


def attention_backward(q, k, v, probs, dout):
    """Gradients of attention_forward w.r.t. q, k, v."""
    dh = q.shape[-1]
    scale = 1.0 / np.sqrt(dh)
    dv = np.matmul(probs.transpose(0, 2, 1), dout)
    dp = np.matmul(dout, v.transpose(0, 2, 1))
    ds = probs * (dp - (dp * probs).sum(axis=-1, keepdims=True))
    ds *= scale
    dq = np.matmul(ds, k)
    dk = np.matmul(ds.transpose(0, 2, 1), q)
    return dq, dk, dv


def layernorm_forward(x, gamma, beta, eps):
    """Row-wise layer norm over the last axis of x (L, D)."""
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * rstd
    y = xhat * gamma + beta
    return y, mean[:, 0], rstd[:, 0]


def layernorm_backward(x, gamma, mean, rstd, dy):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd[:, None]
    return dx, dgamma, dbeta


def gelu_forward(x):
    """Exact (erf-based) GELU."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_backward(x, dy):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return dy * (cdf + x * pdf)


def median_filter(values, width):
    """Sliding-window median with shrinking windows at the edges.

    width must be odd; the window at index i is
    values[max(0, i-h) : min(n, i+h+1)] with h = width // 2.
    """
    n = values.shape[0]
    h = width // 2
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        lo = max(0, i - h)
        hi = min(n, i + h + 1)
        out[i] = np.median(values[lo:hi])
    return out
