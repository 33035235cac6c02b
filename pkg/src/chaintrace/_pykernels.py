"""Pure numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` exactly and are used when the compiled
extension is unavailable or ``CHAINTRACE_PURE=1`` is set.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def im2col(x, k, stride, pad):
    n, c, h, w = x.shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # (n, c, ho, wo, k, k) -> (n, c, k, k, ho, wo)
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * k * k, ho * wo)


def col2im(cols, shape, k, stride, pad):
    n, c, h, w = shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    cols6 = cols.reshape(n, c, k, k, ho, wo)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols6[:, :, i, j]
    return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + w]) if pad else xp


def batchnorm_forward(x, gamma, beta, eps):
    mean = x.mean(axis=(0, 2), dtype=np.float64)
    xc = x - mean[None, :, None]
    var = (xc * xc).mean(axis=(0, 2), dtype=np.float64)
    inv = 1.0 / np.sqrt(var + eps)
    a = gamma * inv
    off = beta - mean * a
    out = (x * a[None, :, None] + off[None, :, None]).astype(x.dtype)
    return out, mean, inv, var


def batchnorm_backward(dout, x, mean, inv, gamma):
    xhat = (x - mean[None, :, None]) * inv[None, :, None]
    db = dout.sum(axis=(0, 2), dtype=np.float64)
    dg = (dout * xhat).sum(axis=(0, 2), dtype=np.float64)
    cnt = x.shape[0] * x.shape[2]
    dx = (gamma * inv)[None, :, None] * (dout - (db / cnt)[None, :, None]
                                         - xhat * (dg / cnt)[None, :, None])
    return dx.astype(x.dtype), dg.astype(x.dtype), db.astype(x.dtype)


def maxpool_forward(x, size, stride):
    n, c, h, w = x.shape
    ho, wo = (h - size) // stride + 1, (w - size) // stride + 1
    win = sliding_window_view(x, (size, size), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, size * size)
    # argmax returns the first maximal index, which is the tie rule we want.
    arg = flat.argmax(axis=-1).astype(np.int32)
    out = np.take_along_axis(flat, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool_backward(dout, arg, shape, size, stride):
    n, c, h, w = shape
    ho, wo = dout.shape[2], dout.shape[3]
    dx = np.zeros(shape, dtype=dout.dtype)
    di, dj = np.divmod(arg, size)
    rows = np.arange(ho)[:, None] * stride + di
    cols = np.arange(wo)[None, :] * stride + dj
    nn = np.arange(n)[:, None, None, None]
    cc = np.arange(c)[None, :, None, None]
    # Windows do not overlap when stride >= size, so plain assignment suffices;
    # np.add.at keeps overlapping windows correct too.
    np.add.at(dx, (nn, cc, rows, cols), dout)
    return dx


def best_gini_split(values, labels, weights, n_classes, min_leaf):
    """Best Gini split over one feature whose samples are sorted by value.

    Returns (weighted child impurity, index i) meaning the split falls between
    sorted positions i and i+1, or (inf, -1) when no split is admissible.
    """
    m = values.shape[0]
    if m < 2:
        return np.inf, -1
    onehot = np.zeros((m, n_classes))
    onehot[np.arange(m), labels] = weights
    left = np.cumsum(onehot, axis=0)[:-1]
    total = left[-1] + onehot[-1]
    right = total - left
    wl = left.sum(axis=1)
    wr = right.sum(axis=1)
    wt = wl[0] + wr[0]
    ok = (values[1:] > values[:-1]) & (wl >= min_leaf) & (wr >= min_leaf)
    if not ok.any():
        return np.inf, -1
    with np.errstate(divide="ignore", invalid="ignore"):
        gl = wl - (left * left).sum(axis=1) / wl
        gr = wr - (right * right).sum(axis=1) / wr
    score = (gl + gr) / wt
    score = np.where(ok, score, np.inf)
    i = int(np.argmin(score))
    return float(score[i]), i
