"""Minimal numpy NN ops (NHWC), with exact analytic backward passes."""

import numpy as np


def conv2d_forward(x, w, b):
    """Same-padding stride-1 convolution. x (S,H,W,Cin), w (kh,kw,Cin,Cout)."""
    kh, kw, cin, cout = w.shape
    ph, pw = kh // 2, kw // 2
    s, h, wd, _ = x.shape
    xp = np.zeros((s, h + 2 * ph, wd + 2 * pw, cin), dtype=x.dtype)
    xp[:, ph:ph + h, pw:pw + wd, :] = x
    acc = np.zeros((s * h * wd, cout), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            flat = np.ascontiguousarray(xp[:, di:di + h, dj:dj + wd, :]).reshape(-1, cin)
            acc += flat @ w[di, dj]
    return acc.reshape(s, h, wd, cout) + b


def conv2d_backward(x, w, dy):
    kh, kw, cin, cout = w.shape
    ph, pw = kh // 2, kw // 2
    s, h, wd, _ = x.shape
    xp = np.zeros((s, h + 2 * ph, wd + 2 * pw, cin), dtype=x.dtype)
    xp[:, ph:ph + h, pw:pw + wd, :] = x
    dy2 = dy.reshape(-1, cout)
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp)
    for di in range(kh):
        for dj in range(kw):
            flat = np.ascontiguousarray(xp[:, di:di + h, dj:dj + wd, :]).reshape(-1, cin)
            dw[di, dj] = flat.T @ dy2
            dxp[:, di:di + h, dj:dj + wd, :] += (dy2 @ w[di, dj].T).reshape(s, h, wd, cin)
    db = dy2.sum(axis=0)
    dx = dxp[:, ph:ph + h, pw:pw + wd, :]
    return dx, dw, db


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, dy):
    return np.where(x > 0, dy, 0)


def avgpool2_forward(x):
    s, h, w, c = x.shape
    return x.reshape(s, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def avgpool2_backward(dy):
    s, h, w, c = dy.shape
    up = np.repeat(np.repeat(dy, 2, axis=1), 2, axis=2)
    return up * np.asarray(0.25, dtype=dy.dtype)


def maxpool2_forward(x):
    """2x2 max pool; returns (y, argmax) with first-max tie-breaking."""
    s, h, w, c = x.shape
    win = x.reshape(s, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    win = win.reshape(s, h // 2, w // 2, c, 4)
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, idx


def maxpool2_backward(dy, idx, in_shape):
    s, h, w, c = in_shape
    dwin = np.zeros((s, h // 2, w // 2, c, 4), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
    dwin = dwin.reshape(s, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return dwin.reshape(s, h, w, c)


def he_init(rng, shape, dtype):
    fan_in = int(np.prod(shape[:-1]))
    return (rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)).astype(dtype)
