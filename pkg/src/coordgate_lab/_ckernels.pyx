# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution, pooling and locally-connected kernels.

Same contract as :mod:`coordgate_lab._kernels_py`. Arrays are float64,
C-contiguous, channels-last. Dense products go straight to BLAS ``dgemm``.
"""
import numpy as np

from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport dgemm

NAME = "cython"


cdef void _gemm_nn(int M, int N, int K, double *A, double *B, double *C, double beta) noexcept nogil:
    # row-major C[M,N] = A[M,K] @ B[K,N] + beta*C
    cdef double one = 1.0
    cdef char tn = b'N'
    if M == 0 or N == 0:
        return
    if K == 0:
        return
    dgemm(&tn, &tn, &N, &M, &K, &one, B, &N, A, &K, &beta, C, &N)


cdef void _gemm_tn(int M, int N, int K, double *A, double *G, double *C) noexcept nogil:
    # row-major C[K,N] = A[M,K].T @ G[M,N]
    cdef double one = 1.0, zero = 0.0
    cdef char tn = b'N', tt = b'T'
    if M == 0 or N == 0 or K == 0:
        return
    dgemm(&tn, &tt, &N, &K, &M, &one, G, &N, A, &K, &zero, C, &N)


cdef void _gemm_nt_acc(int M, int N, int K, double *G, double *W, double *C) noexcept nogil:
    # row-major C[M,K] += G[M,N] @ W[K,N].T
    cdef double one = 1.0
    cdef char tn = b'N', tt = b'T'
    if M == 0 or N == 0 or K == 0:
        return
    dgemm(&tt, &tn, &K, &M, &N, &one, W, &N, G, &N, &one, C, &K)


def im2col(const double[:, :, :, ::1] x, int kh, int kw, int ph, int pw):
    cdef Py_ssize_t b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t oh = h + 2 * ph - kh + 1, ow = w + 2 * pw - kw + 1
    cols_arr = np.empty((b, oh, ow, kh * kw * c), dtype=np.float64)
    cdef double[:, :, :, ::1] cols = cols_arr
    cdef Py_ssize_t n, i, j, dy, dx, yy, xx, off
    cdef size_t row = c * sizeof(double)
    with nogil:
        for n in range(b):
            for i in range(oh):
                for j in range(ow):
                    off = 0
                    for dy in range(kh):
                        yy = i + dy - ph
                        for dx in range(kw):
                            xx = j + dx - pw
                            if 0 <= yy < h and 0 <= xx < w:
                                memcpy(&cols[n, i, j, off], &x[n, yy, xx, 0], row)
                            else:
                                memset(&cols[n, i, j, off], 0, row)
                            off += c
    return cols_arr


def col2im(const double[:, :, :, ::1] gcols, tuple x_shape, int kh, int kw, int ph, int pw):
    cdef Py_ssize_t b = x_shape[0], h = x_shape[1], w = x_shape[2], c = x_shape[3]
    cdef Py_ssize_t oh = gcols.shape[1], ow = gcols.shape[2]
    gx_arr = np.zeros((b, h, w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t n, i, j, dy, dx, yy, xx, ci, off
    with nogil:
        for n in range(b):
            for i in range(oh):
                for j in range(ow):
                    off = 0
                    for dy in range(kh):
                        yy = i + dy - ph
                        for dx in range(kw):
                            xx = j + dx - pw
                            if 0 <= yy < h and 0 <= xx < w:
                                for ci in range(c):
                                    gx[n, yy, xx, ci] += gcols[n, i, j, off + ci]
                            off += c
    return gx_arr


def conv2d_forward(x, w, bias, int ph, int pw):
    """Return ``(out, cache)``; ``cache`` is consumed by :func:`conv2d_backward`.

    Shifted-GEMM scheme: the zero-padded input is flattened to rows of
    channels, and each kernel tap is one GEMM over a row-offset slice of it.
    Rows that wrap across the padded grid are computed and then discarded.
    """
    cdef Py_ssize_t b = x.shape[0], h = x.shape[1], wd = x.shape[2], c = x.shape[3]
    cdef int kh = w.shape[0], kw = w.shape[1], cout = w.shape[3]
    cdef Py_ssize_t Hp = h + 2 * ph, Wp = wd + 2 * pw
    cdef Py_ssize_t oh = Hp - kh + 1, ow = Wp - kw + 1
    cdef int M = b * Hp * Wp
    cdef Py_ssize_t tail = (kh - 1) * Wp + kw - 1
    xp_arr = np.zeros((M + tail, c), dtype=np.float64)
    xp_arr[:M].reshape(b, Hp, Wp, c)[:, ph:ph + h, pw:pw + wd] = x
    full_arr = np.empty((M, cout), dtype=np.float64)
    full_arr[...] = bias
    w_arr = np.ascontiguousarray(w)
    cdef double[:, ::1] xp = xp_arr
    cdef double[:, ::1] full = full_arr
    cdef double[:, :, :, ::1] wv = w_arr
    cdef int dy, dx, ci = c
    cdef Py_ssize_t off
    if M > 0 and c > 0:
        with nogil:
            for dy in range(kh):
                for dx in range(kw):
                    off = dy * Wp + dx
                    _gemm_nn(M, cout, ci, &xp[off, 0], &wv[dy, dx, 0, 0], &full[0, 0], 1.0)
    out = np.ascontiguousarray(full_arr.reshape(b, Hp, Wp, cout)[:, :oh, :ow])
    return out, xp_arr


def conv2d_backward(gout, cache, w, tuple x_shape, int ph, int pw, bint need_input=True):
    """Gradients ``(gx, gw, gb)`` of a ``conv2d_forward`` call; ``gx`` is None when not needed."""
    cdef Py_ssize_t b = x_shape[0], h = x_shape[1], wd = x_shape[2], c = x_shape[3]
    cdef int kh = w.shape[0], kw = w.shape[1], cout = w.shape[3]
    cdef Py_ssize_t Hp = h + 2 * ph, Wp = wd + 2 * pw
    cdef Py_ssize_t oh = Hp - kh + 1, ow = Wp - kw + 1
    cdef int M = b * Hp * Wp
    gfull_arr = np.zeros((M, cout), dtype=np.float64)
    gfull_arr.reshape(b, Hp, Wp, cout)[:, :oh, :ow] = gout
    gw_arr = np.empty((kh, kw, c, cout), dtype=np.float64)
    w_arr = np.ascontiguousarray(w)
    cdef double[:, ::1] xp = cache
    cdef double[:, ::1] gfull = gfull_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[:, :, :, ::1] wv = w_arr
    cdef double[:, ::1] gxp
    cdef int dy, dx, ci = c
    cdef Py_ssize_t off
    gb = np.asarray(gout).reshape(-1, cout).sum(axis=0)
    if M == 0 or c == 0:
        gw_arr[...] = 0.0
        return (np.zeros(x_shape) if need_input else None), gw_arr, gb
    with nogil:
        for dy in range(kh):
            for dx in range(kw):
                off = dy * Wp + dx
                _gemm_tn(M, cout, ci, &xp[off, 0], &gfull[0, 0], &gw[dy, dx, 0, 0])
    gx = None
    if need_input:
        gxp_arr = np.zeros(cache.shape, dtype=np.float64)
        gxp = gxp_arr
        with nogil:
            for dy in range(kh):
                for dx in range(kw):
                    off = dy * Wp + dx
                    _gemm_nt_acc(M, cout, ci, &gfull[0, 0], &wv[dy, dx, 0, 0], &gxp[off, 0])
        gx = np.ascontiguousarray(gxp_arr[:M].reshape(b, Hp, Wp, c)[:, ph:ph + h, pw:pw + wd])
    return gx, gw_arr, gb


def maxpool2_forward(const double[:, :, :, ::1] x):
    """2x2 max-pool; ties go to the first index in row-major order."""
    cdef Py_ssize_t b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t oh = h // 2, ow = w // 2
    out_arr = np.empty((b, oh, ow, c), dtype=np.float64)
    idx_arr = np.empty((b, oh, ow, c), dtype=np.int8)
    cdef double[:, :, :, ::1] out = out_arr
    cdef signed char[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t n, i, j, ci
    cdef double best, v
    cdef signed char arg
    with nogil:
        for n in range(b):
            for i in range(oh):
                for j in range(ow):
                    for ci in range(c):
                        best = x[n, 2 * i, 2 * j, ci]
                        arg = 0
                        v = x[n, 2 * i, 2 * j + 1, ci]
                        if v > best:
                            best = v
                            arg = 1
                        v = x[n, 2 * i + 1, 2 * j, ci]
                        if v > best:
                            best = v
                            arg = 2
                        v = x[n, 2 * i + 1, 2 * j + 1, ci]
                        if v > best:
                            best = v
                            arg = 3
                        out[n, i, j, ci] = best
                        idx[n, i, j, ci] = arg
    return out_arr, idx_arr


def maxpool2_backward(const double[:, :, :, ::1] gout, const signed char[:, :, :, ::1] idx, tuple x_shape):
    gx_arr = np.zeros(x_shape, dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t b = gout.shape[0], oh = gout.shape[1], ow = gout.shape[2], c = gout.shape[3]
    cdef Py_ssize_t n, i, j, ci
    cdef signed char a
    with nogil:
        for n in range(b):
            for i in range(oh):
                for j in range(ow):
                    for ci in range(c):
                        a = idx[n, i, j, ci]
                        gx[n, 2 * i + (a >> 1), 2 * j + (a & 1), ci] = gout[n, i, j, ci]
    return gx_arr


def lcn_forward(const double[:, :, :, ::1] x, w, const double[::1] bias, int ph, int pw):
    """Locally-connected layer; ``w`` has shape [h, w, kh, kw, c_in, c_out]."""
    cdef Py_ssize_t b = x.shape[0], h = x.shape[1], wd = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t kh = w.shape[2], kw = w.shape[3], cout = w.shape[5]
    cdef const double[:, :, :, :, :, ::1] k = np.ascontiguousarray(w)
    out_arr = np.empty((b, h, wd, cout), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, i, j, dy, dx, yy, xx, ci, co
    cdef double xv
    with nogil:
        for n in range(b):
            for i in range(h):
                for j in range(wd):
                    for co in range(cout):
                        out[n, i, j, co] = bias[co]
                    for dy in range(kh):
                        yy = i + dy - ph
                        if yy < 0 or yy >= h:
                            continue
                        for dx in range(kw):
                            xx = j + dx - pw
                            if xx < 0 or xx >= wd:
                                continue
                            for ci in range(c):
                                xv = x[n, yy, xx, ci]
                                for co in range(cout):
                                    out[n, i, j, co] += k[i, j, dy, dx, ci, co] * xv
    return out_arr


def lcn_backward(const double[:, :, :, ::1] gout, const double[:, :, :, ::1] x, w, int ph, int pw, bint need_input=True):
    cdef Py_ssize_t b = x.shape[0], h = x.shape[1], wd = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t kh = w.shape[2], kw = w.shape[3], cout = w.shape[5]
    cdef const double[:, :, :, :, :, ::1] k = np.ascontiguousarray(w)
    gw_arr = np.zeros(w.shape, dtype=np.float64)
    gx_arr = np.zeros((b, h, wd, c), dtype=np.float64)
    cdef double[:, :, :, :, :, ::1] gw = gw_arr
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t n, i, j, dy, dx, yy, xx, ci, co
    cdef double xv, acc, g
    with nogil:
        for n in range(b):
            for i in range(h):
                for j in range(wd):
                    for dy in range(kh):
                        yy = i + dy - ph
                        if yy < 0 or yy >= h:
                            continue
                        for dx in range(kw):
                            xx = j + dx - pw
                            if xx < 0 or xx >= wd:
                                continue
                            for ci in range(c):
                                xv = x[n, yy, xx, ci]
                                acc = 0.0
                                for co in range(cout):
                                    g = gout[n, i, j, co]
                                    gw[i, j, dy, dx, ci, co] += g * xv
                                    acc = acc + k[i, j, dy, dx, ci, co] * g
                                gx[n, yy, xx, ci] += acc
    gb = np.asarray(gout).sum(axis=(0, 1, 2))
    return (gx_arr if need_input else None), gw_arr, gb
