"""Pure-numpy fallback for the convolution kernels.

Same contract as the JIT versions: float64, stride 1, zero "same" padding.
Implemented as sums over kernel taps of shifted padded views, which keeps
everything in vectorized einsum calls.
"""

import numpy as np


def _pad(x, ph, pw):
    c, h, w = x.shape
    out = np.zeros((c, h + 2 * ph, w + 2 * pw))
    out[:, ph:ph + h, pw:pw + w] = x
    return out


def conv2d_forward(x, w, b):
    cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    xp = _pad(x, ph, pw)
    y = np.broadcast_to(b[:, None, None], (cout, h, wd)).copy()
    for dy in range(kh):
        for dx in range(kw):
            y += np.einsum("oc,chw->ohw", w[:, :, dy, dx],
                           xp[:, dy:dy + h, dx:dx + wd])
    return y


def conv2d_vjp_input(w, v):
    cout, cin, kh, kw = w.shape
    _, h, wd = v.shape
    ph, pw = kh // 2, kw // 2
    vp = _pad(v, ph, pw)
    dx_out = np.zeros((cin, h, wd))
    for dy in range(kh):
        for dx in range(kw):
            dx_out += np.einsum("oc,ohw->chw", w[:, :, dy, dx],
                                vp[:, 2 * ph - dy:2 * ph - dy + h,
                                   2 * pw - dx:2 * pw - dx + wd])
    return dx_out


def conv2d_vjp_weight(x, v, cout, kh, kw):
    cin, h, wd = x.shape
    ph, pw = kh // 2, kw // 2
    xp = _pad(x, ph, pw)
    dw = np.empty((cout, cin, kh, kw))
    for dy in range(kh):
        for dx in range(kw):
            dw[:, :, dy, dx] = np.einsum("ohw,chw->oc", v,
                                         xp[:, dy:dy + h, dx:dx + wd])
    return dw, v.sum(axis=(1, 2))


def conv2d_vjp_input_batch(w, v_batch):
    cout, cin, kh, kw = w.shape
    n, _, h, wd = v_batch.shape
    ph, pw = kh // 2, kw // 2
    vp = np.zeros((n, cout, h + 2 * ph, wd + 2 * pw))
    vp[:, :, ph:ph + h, pw:pw + wd] = v_batch
    out = np.zeros((n, cin, h, wd))
    for dy in range(kh):
        for dx in range(kw):
            out += np.einsum("oc,nohw->nchw", w[:, :, dy, dx],
                             vp[:, :, 2 * ph - dy:2 * ph - dy + h,
                                2 * pw - dx:2 * pw - dx + wd])
    return out
