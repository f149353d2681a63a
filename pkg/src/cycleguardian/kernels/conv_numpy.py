"""Pure-numpy fallback kernels (im2col convolutions, vectorised sinc resampling)."""

import numpy as np
from numpy.lib.stride_tricks import as_strided, sliding_window_view


def _im2col(xp, kh, kw, stride, h_out, w_out):
    n, c = xp.shape[:2]
    s = xp.strides
    view = as_strided(
        xp,
        shape=(n, c, h_out, w_out, kh, kw),
        strides=(s[0], s[1], s[2] * stride, s[3] * stride, s[2], s[3]),
    )
    # (N*P, C*kh*kw) with P = h_out*w_out
    return view.transpose(0, 2, 3, 1, 4, 5).reshape(n * h_out * w_out, c * kh * kw)


def conv2d_forward(x, w, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    h_out = (h + 2 * pad - kh) // stride + 1
    w_out = (wd + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    col = _im2col(xp, kh, kw, stride, h_out, w_out)
    y = col @ w.reshape(o, -1).T
    return y.reshape(n, h_out, w_out, o).transpose(0, 3, 1, 2).copy()


def conv2d_grad_weight(gy, x, stride, pad, kh, kw):
    n, c, h, wd = x.shape
    o = gy.shape[1]
    h_out, w_out = gy.shape[2], gy.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    col = _im2col(xp, kh, kw, stride, h_out, w_out)
    g = gy.transpose(0, 2, 3, 1).reshape(-1, o)
    return (col.T @ g).T.reshape(o, c, kh, kw).copy()


def conv2d_grad_input(gy, w, stride, pad, h, wd):
    n, o = gy.shape[:2]
    _, c, kh, kw = w.shape
    h_out, w_out = gy.shape[2], gy.shape[3]
    g = gy.transpose(0, 2, 3, 1).reshape(-1, o)
    gcol = (g @ w.reshape(o, -1)).reshape(n, h_out, w_out, c, kh, kw)
    gxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride] += (
                gcol[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if pad:
        return gxp[:, :, pad:-pad, pad:-pad].copy()
    return gxp


def resample_apply(xpad, base, phase, table):
    windows = sliding_window_view(xpad, table.shape[1])[base]
    return np.einsum("ij,ij->i", windows, table[phase])
