"""Array kernels for the conv/pool/LSTM stack with their reverse-mode rules.

Images are channels-last ``(N, H, W, C)`` inside this module; convolution
weights keep the ``(out, in, k, k)`` layout.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, k):
    """``(N, H, W, C)`` -> ``(N*H*W, k*k*C)`` patches for a same-size convolution."""
    p = k // 2
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (N, H, W, C, k, k)
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, k * k * c)


def _flat_weight(weight):
    out_c, in_c, k, _ = weight.shape
    # column order (ki, kj, c) to match im2col
    return weight.transpose(0, 2, 3, 1).reshape(out_c, k * k * in_c)


def conv_forward(x, weight, bias):
    n, h, w, _ = x.shape
    k = weight.shape[2]
    cols = im2col(x, k)
    out = cols @ _flat_weight(weight).T
    out += bias
    return out.reshape(n, h, w, -1), cols


def conv_backward(dout, cols, x_shape, weight, need_dx=True):
    n, h, w, c = x_shape
    out_c, _, k, _ = weight.shape
    d2 = dout.reshape(-1, out_c)
    dw = (d2.T @ cols).reshape(out_c, k, k, c).transpose(0, 3, 1, 2)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ _flat_weight(weight)).reshape(n, h, w, k, k, c)
    p = k // 2
    dxp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i : i + h, j : j + w, :] += dcols[:, :, :, i, j, :]
    return dxp[:, p : p + h, p : p + w, :], dw, db


_POOL_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


def maxpool_forward(x):
    """2x2 max pool with stride 2 on ``(N, H, W, C)``."""
    return np.maximum(
        np.maximum(x[:, 0::2, 0::2], x[:, 0::2, 1::2]),
        np.maximum(x[:, 1::2, 0::2], x[:, 1::2, 1::2]),
    )


def maxpool_backward(dout, x, out):
    """Route each window's gradient to its first maximal entry (row-major order)."""
    dx = np.zeros_like(x, dtype=dout.dtype)
    free = np.ones(out.shape, dtype=bool)
    for i, j in _POOL_OFFSETS:
        hit = (x[:, i::2, j::2] == out) & free
        dx[:, i::2, j::2] = dout * hit
        free &= ~hit
    return dx


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_layer_forward(xs, w_ih, w_hh, b_ih, b_hh):
    """One LSTM layer over ``xs`` of shape ``(B, T, in)`` from zero state.

    Gate order along the 4h axis is (input, forget, cell, output).
    """
    bsz, steps, _ = xs.shape
    hid = w_hh.shape[1]
    dtype = xs.dtype
    gx = xs.reshape(bsz * steps, -1) @ w_ih.T
    gx = gx.reshape(bsz, steps, 4 * hid) + (b_ih + b_hh)
    h = np.zeros((bsz, hid), dtype=dtype)
    c = np.zeros((bsz, hid), dtype=dtype)
    hs = np.empty((bsz, steps + 1, hid), dtype=dtype)
    cs = np.empty((bsz, steps + 1, hid), dtype=dtype)
    gates = np.empty((bsz, steps, 4 * hid), dtype=dtype)
    hs[:, 0] = h
    cs[:, 0] = c
    for t in range(steps):
        a = gx[:, t] + h @ w_hh.T
        i = sigmoid(a[:, :hid])
        f = sigmoid(a[:, hid : 2 * hid])
        g = np.tanh(a[:, 2 * hid : 3 * hid])
        o = sigmoid(a[:, 3 * hid :])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[:, t] = np.concatenate([i, f, g, o], axis=1)
        hs[:, t + 1] = h
        cs[:, t + 1] = c
    return hs[:, 1:], (xs, hs, cs, gates)


def lstm_layer_backward(dh_out, cache, w_ih, w_hh, need_dx=True):
    """Backpropagate ``dh_out`` (``(B, T, h)``, gradient wrt every hidden output)."""
    xs, hs, cs, gates = cache
    bsz, steps, hid = dh_out.shape
    da_all = np.empty((bsz, steps, 4 * hid), dtype=dh_out.dtype)
    dw_hh = np.zeros_like(w_hh)
    dh_next = np.zeros((bsz, hid), dtype=dh_out.dtype)
    dc_next = np.zeros((bsz, hid), dtype=dh_out.dtype)
    for t in reversed(range(steps)):
        i = gates[:, t, :hid]
        f = gates[:, t, hid : 2 * hid]
        g = gates[:, t, 2 * hid : 3 * hid]
        o = gates[:, t, 3 * hid :]
        tc = np.tanh(cs[:, t + 1])
        dh = dh_out[:, t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        di = dc * g
        dg = dc * i
        df = dc * cs[:, t]
        dc_next = dc * f
        da = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)], axis=1
        )
        da_all[:, t] = da
        dw_hh += da.T @ hs[:, t]
        dh_next = da @ w_hh
    flat = da_all.reshape(bsz * steps, 4 * hid)
    dw_ih = flat.T @ xs.reshape(bsz * steps, -1)
    db = flat.sum(axis=0)
    dxs = (flat @ w_ih).reshape(xs.shape) if need_dx else None
    return dxs, dw_ih, dw_hh, db
