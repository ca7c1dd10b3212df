"""Numba-jitted kernel implementations (default backend).

Zero padding is handled by bounds checks instead of materializing a padded
array. Maxpool breaks activation ties by keeping the first candidate in
row-major window order, matching the numpy fallback.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_forward(x, w, b, stride, pad):
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    y = np.empty((o, oh, ow))
    for oc in range(o):
        for i in range(oh):
            for j in range(ow):
                acc = b[oc]
                for ic in range(c):
                    for ki in range(kh):
                        ri = i * stride + ki - pad
                        if ri < 0 or ri >= h:
                            continue
                        for kj in range(kw):
                            cj = j * stride + kj - pad
                            if cj < 0 or cj >= wd:
                                continue
                            acc += w[oc, ic, ki, kj] * x[ic, ri, cj]
                y[oc, i, j] = acc
    return y


@njit(cache=True)
def conv2d_backward_input(dy, w, stride, pad, in_h, in_w):
    o, oh, ow = dy.shape
    _, c, kh, kw = w.shape
    dx = np.zeros((c, in_h, in_w))
    for oc in range(o):
        for i in range(oh):
            for j in range(ow):
                g = dy[oc, i, j]
                if g == 0.0:
                    continue
                for ic in range(c):
                    for ki in range(kh):
                        ri = i * stride + ki - pad
                        if ri < 0 or ri >= in_h:
                            continue
                        for kj in range(kw):
                            cj = j * stride + kj - pad
                            if cj < 0 or cj >= in_w:
                                continue
                            dx[ic, ri, cj] += w[oc, ic, ki, kj] * g
    return dx


@njit(cache=True)
def conv2d_backward_weights(dy, x, kh, kw, stride, pad):
    o, oh, ow = dy.shape
    c, h, wd = x.shape
    dw = np.zeros((o, c, kh, kw))
    db = np.zeros(o)
    for oc in range(o):
        for i in range(oh):
            for j in range(ow):
                g = dy[oc, i, j]
                db[oc] += g
                if g == 0.0:
                    continue
                for ic in range(c):
                    for ki in range(kh):
                        ri = i * stride + ki - pad
                        if ri < 0 or ri >= h:
                            continue
                        for kj in range(kw):
                            cj = j * stride + kj - pad
                            if cj < 0 or cj >= wd:
                                continue
                            dw[oc, ic, ki, kj] += g * x[ic, ri, cj]
    return dw, db


@njit(cache=True)
def maxpool_forward(x, window, stride):
    c, h, wd = x.shape
    oh = (h - window) // stride + 1
    ow = (wd - window) // stride + 1
    y = np.empty((c, oh, ow))
    idx = np.empty((c, oh, ow), dtype=np.int64)
    for ic in range(c):
        for i in range(oh):
            for j in range(ow):
                best = -np.inf
                best_at = 0
                for ki in range(window):
                    for kj in range(window):
                        ri = i * stride + ki
                        cj = j * stride + kj
                        v = x[ic, ri, cj]
                        if v > best:
                            best = v
                            best_at = ri * wd + cj
                y[ic, i, j] = best
                idx[ic, i, j] = best_at
    return y, idx


@njit(cache=True)
def maxpool_backward(dy, idx, in_h, in_w):
    c, oh, ow = dy.shape
    dx = np.zeros((c, in_h, in_w))
    flat = dx.reshape(c, in_h * in_w)
    for ic in range(c):
        for i in range(oh):
            for j in range(ow):
                flat[ic, idx[ic, i, j]] += dy[ic, i, j]
    return dx
