"""Pure-numpy kernel implementations.

Fallback path used when numba is unavailable or when DATAPATHS_KERNELS=numpy.
Semantics (including maxpool first-index tie-breaking) must match the numba
twins in ``_numba.py``; the parity test pins both within 1e-10.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, w, b, stride, pad):
    # x: (C,H,W), w: (O,C,kh,kw), b: (O,) -> (O,OH,OW)
    o, c, kh, kw = w.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    y = np.einsum("cijkl,ockl->oij", win, w, optimize=True)
    return y + b[:, None, None]


def conv2d_backward_input(dy, w, stride, pad, in_h, in_w):
    # dy: (O,OH,OW) -> dx: (C,in_h,in_w)
    o, oh, ow = dy.shape
    _, c, kh, kw = w.shape
    dxp = np.zeros((c, in_h + 2 * pad, in_w + 2 * pad))
    for ki in range(kh):
        for kj in range(kw):
            contrib = np.einsum("oc,oij->cij", w[:, :, ki, kj], dy, optimize=True)
            dxp[:, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += contrib
    if pad:
        return np.ascontiguousarray(dxp[:, pad : pad + in_h, pad : pad + in_w])
    return dxp


def conv2d_backward_weights(dy, x, kh, kw, stride, pad):
    # dy: (O,OH,OW), x: (C,H,W) -> dw: (O,C,kh,kw), db: (O,)
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    dw = np.einsum("oij,cijkl->ockl", dy, win, optimize=True)
    db = dy.sum(axis=(1, 2))
    return dw, db


def maxpool_forward(x, window, stride):
    # x: (C,H,W) -> y: (C,OH,OW), idx: flat per-channel argmax into H*W
    c, h, w = x.shape
    win = sliding_window_view(x, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    oh, ow = win.shape[1], win.shape[2]
    flat = win.reshape(c, oh, ow, window * window)
    arg = flat.argmax(axis=3)  # np.argmax keeps the first maximum: row-major tie-break
    y = np.take_along_axis(flat, arg[..., None], axis=3)[..., 0]
    rows = np.arange(oh)[None, :, None] * stride + arg // window
    cols = np.arange(ow)[None, None, :] * stride + arg % window
    idx = rows * w + cols
    return np.ascontiguousarray(y), np.ascontiguousarray(idx)


def maxpool_backward(dy, idx, in_h, in_w):
    c = dy.shape[0]
    dx = np.zeros(c * in_h * in_w)
    offsets = (np.arange(c) * in_h * in_w)[:, None, None]
    np.add.at(dx, (offsets + idx).ravel(), dy.ravel())
    return dx.reshape(c, in_h, in_w)
