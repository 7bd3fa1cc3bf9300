"""Numba-jitted kernels; single-threaded on purpose so results are
reproducible run-to-run (no prange reduction reordering).

Must match kernels.numpy_impl up to floating-point reassociation.
"""

import math

import numpy as np
from numba import njit

_JIT = dict(cache=True, fastmath=False, nogil=True)


@njit(**_JIT)
def attention_forward(q, k, v):
    H, Lq, Dh = q.shape
    Lk = k.shape[1]
    scale = 1.0 / math.sqrt(Dh)
    out = np.empty((H, Lq, Dh))
    probs = np.empty((H, Lq, Lk))
    for h in range(H):
        for i in range(Lq):
            mx = -1e300
            for j in range(Lk):
                s = 0.0
                for d in range(Dh):
                    s += q[h, i, d] * k[h, j, d]
                s *= scale
                probs[h, i, j] = s
                if s > mx:
                    mx = s
            z = 0.0
            for j in range(Lk):
                e = math.exp(probs[h, i, j] - mx)
                probs[h, i, j] = e
                z += e
            inv = 1.0 / z
            for d in range(Dh):
                acc = 0.0
                for j in range(Lk):
                    acc += probs[h, i, j] * inv * v[h, j, d]
                out[h, i, d] = acc
            for j in range(Lk):
                probs[h, i, j] *= inv
    return out, probs


@njit(**_JIT)
def attention_backward(q, k, v, probs, dout):
    H, Lq, Dh = q.shape
    Lk = k.shape[1]
    scale = 1.0 / math.sqrt(Dh)
    dq = np.zeros((H, Lq, Dh))
    dk = np.zeros((H, Lk, Dh))
    dv = np.zeros((H, Lk, Dh))
    for h in range(H):
        for i in range(Lq):
            # dv += p^T dout ; dp = dout v^T
            row_dot = 0.0
            dp = np.empty(Lk)
            for j in range(Lk):
                acc = 0.0
                for d in range(Dh):
                    acc += dout[h, i, d] * v[h, j, d]
                    dv[h, j, d] += probs[h, i, j] * dout[h, i, d]
                dp[j] = acc
                row_dot += acc * probs[h, i, j]
            for j in range(Lk):
                ds = probs[h, i, j] * (dp[j] - row_dot) * scale
                for d in range(Dh):
                    dq[h, i, d] += ds * k[h, j, d]
                    dk[h, j, d] += ds * q[h, i, d]
    return dq, dk, dv


@njit(**_JIT)
def layernorm_forward(x, gamma, beta, eps):
    L, D = x.shape
    y = np.empty((L, D))
    mean = np.empty(L)
    rstd = np.empty(L)
    for i in range(L):
        m = 0.0
        for d in range(D):
            m += x[i, d]
        m /= D
        v = 0.0
        for d in range(D):
            t = x[i, d] - m
            v += t * t
        v /= D
        r = 1.0 / math.sqrt(v + eps)
        mean[i] = m
        rstd[i] = r
        for d in range(D):
            y[i, d] = (x[i, d] - m) * r * gamma[d] + beta[d]
    return y, mean, rstd


@njit(**_JIT)
def layernorm_backward(x, gamma, mean, rstd, dy):
    L, D = x.shape
    dx = np.empty((L, D))
    dgamma = np.zeros(D)
    dbeta = np.zeros(D)
    for i in range(L):
        m1 = 0.0
        m2 = 0.0
        for d in range(D):
            xhat = (x[i, d] - mean[i]) * rstd[i]
            g = dy[i, d] * gamma[d]
            m1 += g
            m2 += g * xhat
            dgamma[d] += dy[i, d] * xhat
            dbeta[d] += dy[i, d]
        m1 /= D
        m2 /= D
        for d in range(D):
            xhat = (x[i, d] - mean[i]) * rstd[i]
            dx[i, d] = (dy[i, d] * gamma[d] - m1 - xhat * m2) * rstd[i]
    return dx, dgamma, dbeta


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@njit(**_JIT)
def gelu_forward(x):
    flat = x.ravel()
    out = np.empty(flat.shape[0])
    for i in range(flat.shape[0]):
        out[i] = 0.5 * flat[i] * (1.0 + math.erf(flat[i] * _INV_SQRT2))
    return out.reshape(x.shape)


@njit(**_JIT)
def gelu_backward(x, dy):
    flat = x.ravel()
    dflat = dy.ravel()
    out = np.empty(flat.shape[0])
    for i in range(flat.shape[0]):
        cdf = 0.5 * (1.0 + math.erf(flat[i] * _INV_SQRT2))
        pdf = _INV_SQRT2PI * math.exp(-0.5 * flat[i] * flat[i])
        out[i] = dflat[i] * (cdf + flat[i] * pdf)
    return out.reshape(x.shape)


@njit(**_JIT)
def median_filter(values, width):
    n = values.shape[0]
    h = width // 2
    out = np.empty(n)
    for i in range(n):
        lo = max(0, i - h)
        hi = min(n, i + h + 1)
        win = np.sort(values[lo:hi].copy())
        m = hi - lo
        if m % 2 == 1:
            out[i] = win[m // 2]
        else:
            out[i] = 0.5 * (win[m // 2 - 1] + win[m // 2])
    return out
