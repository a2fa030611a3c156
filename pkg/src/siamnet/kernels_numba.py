"""Numba-compiled convolution and pooling kernels.

Same signatures as kernels_numpy.  Plain nested loops; serial and
fastmath-free so results are deterministic and match the numpy backend
to rounding error.  First call per shape pays JIT compilation (cached
on disk).
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def conv2d_fwd(xp, filters, bias):
    n, c, hp, wp = xp.shape
    k, _, kh, kw = filters.shape
    h, w = hp - kh + 1, wp - kw + 1
    out = np.empty((n, k, h, w))
    for ni in range(n):
        for ki in range(k):
            for i in range(h):
                for j in range(w):
                    acc = bias[ki]
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[ni, ci, i + u, j + v] * filters[ki, ci, u, v]
                    out[ni, ki, i, j] = acc
    return out


@njit(cache=True, nogil=True)
def conv2d_bwd_filters(xp, grad):
    n, c, hp, wp = xp.shape
    _, k, h, w = grad.shape
    kh, kw = hp - h + 1, wp - w + 1
    df = np.zeros((k, c, kh, kw))
    db = np.zeros(k)
    for ni in range(n):
        for ki in range(k):
            for i in range(h):
                for j in range(w):
                    g = grad[ni, ki, i, j]
                    db[ki] += g
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                df[ki, ci, u, v] += g * xp[ni, ci, i + u, j + v]
    return df, db


@njit(cache=True, nogil=True)
def conv2d_bwd_input(gp, filters):
    n, k, hg, wg = gp.shape
    _, c, kh, kw = filters.shape
    h, w = hg - kh + 1, wg - kw + 1
    dxp = np.zeros((n, c, h, w))
    for ni in range(n):
        for ci in range(c):
            for i in range(h):
                for j in range(w):
                    acc = 0.0
                    for ki in range(k):
                        for u in range(kh):
                            for v in range(kw):
                                acc += gp[ni, ki, i + u, j + v] * filters[ki, ci, kh - 1 - u, kw - 1 - v]
                    dxp[ni, ci, i, j] = acc
    return dxp


@njit(cache=True, nogil=True)
def maxpool2_fwd(x):
    n, k, h, w = x.shape
    ho, wo = h // 2, w // 2
    out = np.empty((n, k, ho, wo))
    idx = np.empty((n, k, ho, wo), dtype=np.uint8)
    for ni in range(n):
        for ki in range(k):
            for i in range(ho):
                for j in range(wo):
                    best = x[ni, ki, 2 * i, 2 * j]
                    code = 0
                    for p in range(4):
                        v = x[ni, ki, 2 * i + p // 2, 2 * j + p % 2]
                        if v > best:  # strict: first index wins ties
                            best = v
                            code = p
                    out[ni, ki, i, j] = best
                    idx[ni, ki, i, j] = code
    return out, idx


@njit(cache=True, nogil=True)
def maxpool2_bwd(idx, grad):
    n, k, ho, wo = grad.shape
    dx = np.zeros((n, k, 2 * ho, 2 * wo))
    for ni in range(n):
        for ki in range(k):
            for i in range(ho):
                for j in range(wo):
                    p = idx[ni, ki, i, j]
                    dx[ni, ki, 2 * i + p // 2, 2 * j + p % 2] = grad[ni, ki, i, j]
    return dx
