"""im2col / col2im kernels for stride-1 square convolutions (NCHW).

The matrix products themselves go through BLAS in both paths; only the
gather/scatter loops differ.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import _accel


@_accel.njit
def _im2col_numba(xpad, k, ho, wo):
    n, c = xpad.shape[0], xpad.shape[1]
    cols = np.empty((n, ho, wo, c, k, k))
    for a in range(n):
        for h in range(ho):
            for w in range(wo):
                for ch in range(c):
                    for i in range(k):
                        for j in range(k):
                            cols[a, h, w, ch, i, j] = xpad[a, ch, h + i, w + j]
    return cols.reshape(n * ho * wo, c * k * k)


def _im2col_numpy(xpad, k, ho, wo):
    n, c = xpad.shape[0], xpad.shape[1]
    win = sliding_window_view(xpad, (k, k), axis=(2, 3))  # (n, c, ho, wo, k, k)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)


@_accel.njit
def _col2im_numba(dcols, n, c, hp, wp, k, ho, wo):
    d = dcols.reshape(n, ho, wo, c, k, k)
    dx = np.zeros((n, c, hp, wp))
    for a in range(n):
        for i in range(k):
            for j in range(k):
                for ch in range(c):
                    for h in range(ho):
                        for w in range(wo):
                            dx[a, ch, h + i, w + j] += d[a, h, w, ch, i, j]
    return dx


def _col2im_numpy(dcols, n, c, hp, wp, k, ho, wo):
    d = dcols.reshape(n, ho, wo, c, k, k)
    dx = np.zeros((n, c, hp, wp))
    for i in range(k):
        for j in range(k):
            dx[:, :, i : i + ho, j : j + wo] += d[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dx


def im2col(xpad, k, ho, wo, use_numba=None):
    fn = _accel.pick(_im2col_numba, _im2col_numpy) if use_numba is None else (_im2col_numba if use_numba else _im2col_numpy)
    return fn(np.ascontiguousarray(xpad), k, ho, wo)


def col2im(dcols, n, c, hp, wp, k, ho, wo, use_numba=None):
    fn = _accel.pick(_col2im_numba, _col2im_numpy) if use_numba is None else (_col2im_numba if use_numba else _col2im_numpy)
    return fn(np.ascontiguousarray(dcols), n, c, hp, wp, k, ho, wo)


# rows of the im2col matrix processed per chunk, bounds scratch memory
_CHUNK_ELEMS = 1 << 22


def _chunks(n, per_sample):
    step = max(1, _CHUNK_ELEMS // max(per_sample, 1))
    for s in range(0, n, step):
        yield s, min(n, s + step)


def conv_forward(x, weight, bias, pad, use_numba=None):
    n, c, h, w = x.shape
    o, _, k, _ = weight.shape
    xpad = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    ho, wo = xpad.shape[2] - k + 1, xpad.shape[3] - k + 1
    wmat = weight.reshape(o, -1)
    out = np.empty((n, o, ho, wo))
    for s, e in _chunks(n, ho * wo * c * k * k):
        cols = im2col(xpad[s:e], k, ho, wo, use_numba)
        res = cols @ wmat.T + bias
        out[s:e] = res.reshape(e - s, ho, wo, o).transpose(0, 3, 1, 2)
    return out


def conv_backward(x, weight, grad_out, pad, use_numba=None):
    """Return (grad_x, grad_weight, grad_bias)."""
    n, c, h, w = x.shape
    o, _, k, _ = weight.shape
    xpad = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    hp, wp = xpad.shape[2], xpad.shape[3]
    ho, wo = hp - k + 1, wp - k + 1
    wmat = weight.reshape(o, -1)
    gw = np.zeros_like(wmat)
    gb = np.zeros(o)
    gx = np.empty((n, c, h, w))
    for s, e in _chunks(n, ho * wo * c * k * k):
        cols = im2col(xpad[s:e], k, ho, wo, use_numba)
        g2 = np.ascontiguousarray(grad_out[s:e].transpose(0, 2, 3, 1)).reshape(-1, o)
        gw += g2.T @ cols
        gb += g2.sum(axis=0)
        dxp = col2im(g2 @ wmat, e - s, c, hp, wp, k, ho, wo, use_numba)
        gx[s:e] = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
    return gx, gw.reshape(weight.shape), gb
