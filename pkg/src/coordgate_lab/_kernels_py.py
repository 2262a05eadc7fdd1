"""Pure-NumPy kernels; fallback for the compiled ``_ckernels`` module.

Every function matches its compiled twin's signature and return layout.
Arrays are float64, channels-last: ``x`` is [batch, height, width, channels].
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "python"


def im2col(x, kh, kw, ph, pw):
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # [b, oh, ow, c, kh, kw]
    oh, ow = win.shape[1], win.shape[2]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(b, oh, ow, kh * kw * c)


def col2im(gcols, x_shape, kh, kw, ph, pw):
    b, h, w, c = x_shape
    oh, ow = gcols.shape[1], gcols.shape[2]
    g = gcols.reshape(b, oh, ow, kh, kw, c)
    gxp = np.zeros((b, h + 2 * ph, w + 2 * pw, c))
    for dy in range(kh):
        for dx in range(kw):
            gxp[:, dy:dy + oh, dx:dx + ow, :] += g[:, :, :, dy, dx, :]
    return gxp[:, ph:ph + h, pw:pw + w, :].copy()


def conv2d_forward(x, w, bias, ph, pw):
    kh, kw, cin, cout = w.shape
    cols = im2col(x, kh, kw, ph, pw)
    out = cols.reshape(-1, kh * kw * cin) @ w.reshape(-1, cout)
    out += bias
    return out.reshape(cols.shape[:3] + (cout,)), cols


def conv2d_backward(gout, cols, w, x_shape, ph, pw, need_input=True):
    kh, kw, cin, cout = w.shape
    g2 = gout.reshape(-1, cout)
    cols2 = cols.reshape(-1, kh * kw * cin)
    gw = (cols2.T @ g2).reshape(w.shape)
    gb = g2.sum(axis=0)
    gx = None
    if need_input:
        gcols = (g2 @ w.reshape(-1, cout).T).reshape(cols.shape)
        gx = col2im(gcols, x_shape, kh, kw, ph, pw)
    return gx, gw, gb


def _quads(x):
    b, h, w, c = x.shape
    q = x.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    return q.reshape(b, h // 2, w // 2, c, 4)


def maxpool2_forward(x):
    q = _quads(x)
    idx = q.argmax(axis=-1)  # argmax returns the first maximum
    out = np.take_along_axis(q, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx.astype(np.int8)


def maxpool2_backward(gout, idx, x_shape):
    b, h, w, c = x_shape
    onehot = idx[..., None] == np.arange(4, dtype=np.int8)
    gq = np.where(onehot, gout[..., None], 0.0)  # [b, h/2, w/2, c, 4]
    gq = gq.reshape(b, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(gq.reshape(b, h, w, c))


def lcn_forward(x, w, bias, ph, pw):
    h, wd, kh, kw, cin, cout = w.shape
    cols = im2col(x, kh, kw, ph, pw)  # [b, h, w, K]
    wk = w.reshape(h, wd, kh * kw * cin, cout)
    out = np.einsum("bhwk,hwko->bhwo", cols, wk, optimize=True)
    return out + bias


def lcn_backward(gout, x, w, ph, pw, need_input=True):
    h, wd, kh, kw, cin, cout = w.shape
    cols = im2col(x, kh, kw, ph, pw)
    wk = w.reshape(h, wd, kh * kw * cin, cout)
    gw = np.einsum("bhwk,bhwo->hwko", cols, gout, optimize=True).reshape(w.shape)
    gb = gout.sum(axis=(0, 1, 2))
    gx = None
    if need_input:
        gcols = np.einsum("bhwo,hwko->bhwk", gout, wk, optimize=True)
        gx = col2im(gcols, x.shape, kh, kw, ph, pw)
    return gx, gw, gb
