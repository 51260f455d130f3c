"""JIT-compiled convolution kernels.

All kernels assume float64 C-contiguous arrays, stride-1 convolutions and
zero "same" padding.  Inputs are padded once so the hot loops are branch
free, and the innermost loop always runs over the contiguous axis; loop
order is fixed so results are bit-reproducible.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _pad(x, p):
    c, h, w = x.shape
    out = np.zeros((c, h + 2 * p, w + 2 * p))
    out[:, p:p + h, p:p + w] = x
    return out


@njit(cache=True)
def conv2d_forward(x, w, b):
    cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    p = k // 2
    xp = _pad(x, p)
    y = np.empty((cout, h, wd))
    for o in range(cout):
        for i in range(h):
            for j in range(wd):
                y[o, i, j] = b[o]
        for c in range(cin):
            for dy in range(k):
                for dx in range(k):
                    wv = w[o, c, dy, dx]
                    for i in range(h):
                        for j in range(wd):
                            y[o, i, j] += wv * xp[c, i + dy, j + dx]
    return y


@njit(cache=True)
def conv2d_vjp_input(w, v):
    cout, cin, k, _ = w.shape
    _, h, wd = v.shape
    p = k // 2
    vp = _pad(v, p)
    dx_out = np.zeros((cin, h, wd))
    for c in range(cin):
        for o in range(cout):
            for dy in range(k):
                for dx in range(k):
                    wv = w[o, c, dy, dx]
                    oy = 2 * p - dy
                    ox = 2 * p - dx
                    for i in range(h):
                        for j in range(wd):
                            dx_out[c, i, j] += wv * vp[o, i + oy, j + ox]
    return dx_out


@njit(cache=True)
def conv2d_vjp_weight(x, v, cout, kh, kw):
    cin, h, wd = x.shape
    p = kh // 2
    xp = _pad(x, p)
    dw = np.empty((cout, cin, kh, kw))
    db = np.empty(cout)
    for o in range(cout):
        acc = 0.0
        for i in range(h):
            for j in range(wd):
                acc += v[o, i, j]
        db[o] = acc
        for c in range(cin):
            for dy in range(kh):
                for dx in range(kw):
                    s = 0.0
                    for i in range(h):
                        for j in range(wd):
                            s += v[o, i, j] * xp[c, i + dy, j + dx]
                    dw[o, c, dy, dx] = s
    return dw, db


@njit(cache=True)
def conv2d_vjp_input_batch(w, v_batch):
    n = v_batch.shape[0]
    cin = w.shape[1]
    h, wd = v_batch.shape[2], v_batch.shape[3]
    out = np.empty((n, cin, h, wd))
    for i in range(n):
        out[i] = conv2d_vjp_input(w, v_batch[i])
    return out
