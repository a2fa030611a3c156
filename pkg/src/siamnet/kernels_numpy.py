"""Pure-numpy convolution and pooling kernels.

Convolutions loop over the (small) kernel footprint and hand each shift
to BLAS as one batched matmul, which keeps memory flat compared to an
im2col buffer.  Callers pass pre-padded inputs; see layers.py for the
pad/crop bookkeeping shared with the numba backend.
"""

import numpy as np


def conv2d_fwd(xp: np.ndarray, filters: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of padded input xp [N,C,Hp,Wp] with filters [K,C,kh,kw]."""
    n, c, hp, wp = xp.shape
    k, _, kh, kw = filters.shape
    h, w = hp - kh + 1, wp - kw + 1
    out = np.zeros((n, k, h * w))
    for u in range(kh):
        for v in range(kw):
            xs = xp[:, :, u:u + h, v:v + w].reshape(n, c, h * w)
            out += np.matmul(filters[:, :, u, v], xs)
    out = out.reshape(n, k, h, w)
    out += bias[None, :, None, None]
    return out


def conv2d_bwd_filters(xp: np.ndarray, grad: np.ndarray):
    """Gradients w.r.t. filters and bias; xp padded input, grad [N,K,H,W]."""
    n, c, hp, wp = xp.shape
    _, k, h, w = grad.shape
    kh, kw = hp - h + 1, wp - w + 1
    gr = grad.reshape(n, k, h * w)
    df = np.empty((k, c, kh, kw))
    for u in range(kh):
        for v in range(kw):
            xs = xp[:, :, u:u + h, v:v + w].reshape(n, c, h * w)
            df[:, :, u, v] = np.einsum("nkx,ncx->kc", gr, xs, optimize=True)
    db = grad.sum(axis=(0, 2, 3))
    return df, db


def conv2d_bwd_input(gp: np.ndarray, filters: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the padded input.

    gp is the upstream gradient padded by (kh-1, kw-1) on each spatial
    border; the result has the padded-input shape and the caller crops.
    """
    n, k, hg, wg = gp.shape
    _, c, kh, kw = filters.shape
    h, w = hg - kh + 1, wg - kw + 1
    dxp = np.zeros((n, c, h * w))
    for u in range(kh):
        for v in range(kw):
            gs = gp[:, :, u:u + h, v:v + w].reshape(n, k, h * w)
            # full correlation: kernel indices run reversed
            dxp += np.matmul(filters[:, :, kh - 1 - u, kw - 1 - v].T, gs)
    return dxp.reshape(n, c, h, w)


def maxpool2_fwd(x: np.ndarray):
    """2x2/stride-2 max pool; returns (output, argmax code in 0..3).

    Ties go to the first position in row-major window order, which is
    what np.argmax yields on the flattened window.
    """
    n, k, h, w = x.shape
    win = x.reshape(n, k, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, k, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1).astype(np.uint8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, idx


def maxpool2_bwd(idx: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Route grad [N,K,H/2,W/2] to the recorded argmax positions."""
    n, k, ho, wo = grad.shape
    scat = np.zeros((n, k, ho, wo, 4))
    np.put_along_axis(scat, idx[..., None].astype(np.intp), grad[..., None], axis=-1)
    scat = scat.reshape(n, k, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return scat.reshape(n, k, 2 * ho, 2 * wo)
