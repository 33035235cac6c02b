# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: im2col/col2im, batch norm, 2-D max pooling, Gini split scan."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, sqrt

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int k, int stride, int pad):
    """Unfold to (N, C*k*k, Ho*Wo); column order is (channel, ky, kx)."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, c * k * k, ho * wo), dtype=dtype)
    cdef real[:, :, ::1] cols = out
    cdef Py_ssize_t b, oy, ox, ch, i, j, row, iy, ix, base
    with nogil:
        for b in range(n):
            row = 0
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        for oy in range(ho):
                            iy = oy * stride + i - pad
                            base = oy * wo
                            if iy < 0 or iy >= h:
                                for ox in range(wo):
                                    cols[b, row, base + ox] = 0
                                continue
                            for ox in range(wo):
                                ix = ox * stride + j - pad
                                if 0 <= ix < w:
                                    cols[b, row, base + ox] = x[b, ch, iy, ix]
                                else:
                                    cols[b, row, base + ox] = 0
                        row = row + 1
    return out


def col2im(real[:, :, ::1] cols, shape, int k, int stride, int pad):
    """Adjoint of im2col: scatter-add (N, C*k*k, Ho*Wo) back to NCHW."""
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, oy, ox, ch, i, j, row, iy, ix, base
    with nogil:
        for b in range(n):
            row = 0
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        for oy in range(ho):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= h:
                                continue
                            base = oy * wo
                            for ox in range(wo):
                                ix = ox * stride + j - pad
                                if 0 <= ix < w:
                                    dx[b, ch, iy, ix] += cols[b, row, base + ox]
                        row = row + 1
    return out


def batchnorm_forward(real[:, :, ::1] x, real[::1] gamma, real[::1] beta, double eps):
    """Training-mode batch norm over axes (0, 2) of an (N, C, P) array.

    Returns (out, mean, inv_std, biased_var); statistics accumulate in double.
    """
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], p = x.shape[2]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c, p), dtype=dtype)
    mean_arr = np.empty(c)
    inv_arr = np.empty(c)
    var_arr = np.empty(c)
    cdef real[:, :, ::1] out = out_arr
    cdef double[::1] mean = mean_arr, inv = inv_arr, var = var_arr
    cdef Py_ssize_t b, ch, i
    cdef double s, ss, d, m, a, off, cnt = <double>(n * p)
    with nogil:
        for ch in range(c):
            s = 0.0
            for b in range(n):
                for i in range(p):
                    s += x[b, ch, i]
            m = s / cnt
            ss = 0.0
            for b in range(n):
                for i in range(p):
                    d = x[b, ch, i] - m
                    ss += d * d
            mean[ch] = m
            var[ch] = ss / cnt
            inv[ch] = 1.0 / sqrt(var[ch] + eps)
            a = gamma[ch] * inv[ch]
            off = beta[ch] - m * a
            for b in range(n):
                for i in range(p):
                    out[b, ch, i] = <real>(x[b, ch, i] * a + off)
    return out_arr, mean_arr, inv_arr, var_arr


def batchnorm_backward(real[:, :, ::1] dout, real[:, :, ::1] x, double[::1] mean,
                       double[::1] inv, real[::1] gamma):
    """Returns (dx, dgamma, dbeta) for batchnorm_forward."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], p = x.shape[2]
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.empty((n, c, p), dtype=dtype)
    dg_arr = np.empty(c, dtype=dtype)
    db_arr = np.empty(c, dtype=dtype)
    cdef real[:, :, ::1] dx = dx_arr
    cdef real[::1] dg = dg_arr, db = db_arr
    cdef Py_ssize_t b, ch, i
    cdef double sd, sdx, xh, m, iv, mean_d, mean_dx, scale, cnt = <double>(n * p)
    with nogil:
        for ch in range(c):
            m = mean[ch]
            iv = inv[ch]
            sd = 0.0
            sdx = 0.0
            for b in range(n):
                for i in range(p):
                    sd += dout[b, ch, i]
                    sdx += dout[b, ch, i] * (x[b, ch, i] - m) * iv
            db[ch] = <real>sd
            dg[ch] = <real>sdx
            mean_d = sd / cnt
            mean_dx = sdx / cnt
            scale = gamma[ch] * iv
            for b in range(n):
                for i in range(p):
                    xh = (x[b, ch, i] - m) * iv
                    dx[b, ch, i] = <real>(scale * (dout[b, ch, i] - mean_d - xh * mean_dx))
    return dx_arr, dg_arr, db_arr


def maxpool_forward(real[:, :, :, ::1] x, int size, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - size) // stride + 1
    cdef Py_ssize_t wo = (w - size) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c, ho, wo), dtype=dtype)
    arg_arr = np.empty((n, c, ho, wo), dtype=np.int32)
    cdef real[:, :, :, ::1] out = out_arr
    cdef int[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, ch, oy, ox, i, j
    cdef real best, v
    cdef int besti
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oy in range(ho):
                    for ox in range(wo):
                        best = x[b, ch, oy * stride, ox * stride]
                        besti = 0
                        for i in range(size):
                            for j in range(size):
                                v = x[b, ch, oy * stride + i, ox * stride + j]
                                # strict comparison keeps the first maximum
                                if v > best:
                                    best = v
                                    besti = <int>(i * size + j)
                        out[b, ch, oy, ox] = best
                        arg[b, ch, oy, ox] = besti
    return out_arr, arg_arr


def maxpool_backward(real[:, :, :, ::1] dout, int[:, :, :, ::1] arg, shape, int size, int stride):
    cdef Py_ssize_t n = shape[0], c = shape[1]
    cdef Py_ssize_t ho = dout.shape[2], wo = dout.shape[3]
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.zeros(tuple(shape), dtype=dtype)
    cdef real[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, ch, oy, ox
    cdef int a
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oy in range(ho):
                    for ox in range(wo):
                        a = arg[b, ch, oy, ox]
                        dx[b, ch, oy * stride + a // size, ox * stride + a % size] += dout[b, ch, oy, ox]
    return dx_arr


def best_gini_split(double[::1] values, cnp.intp_t[::1] labels, double[::1] weights,
                    int n_classes, double min_leaf):
    cdef Py_ssize_t m = values.shape[0]
    if m < 2:
        return INFINITY, -1
    left_arr = np.zeros(n_classes)
    total_arr = np.zeros(n_classes)
    cdef double[::1] left = left_arr
    cdef double[::1] total = total_arr
    cdef Py_ssize_t i, q
    cdef double wl = 0.0, wt = 0.0, wr, sl, sr, r, score, best = INFINITY
    cdef Py_ssize_t besti = -1
    with nogil:
        for i in range(m):
            total[labels[i]] += weights[i]
        for q in range(n_classes):
            wt += total[q]
        for i in range(m - 1):
            left[labels[i]] += weights[i]
            wl += weights[i]
            if not values[i + 1] > values[i]:
                continue
            wr = wt - wl
            if wl < min_leaf or wr < min_leaf:
                continue
            sl = 0.0
            sr = 0.0
            for q in range(n_classes):
                sl += left[q] * left[q]
                r = total[q] - left[q]
                sr += r * r
            score = ((wl - sl / wl) + (wr - sr / wr)) / wt
            if score < best:
                best = score
                besti = i
    return best, besti
