"""Hot numeric kernels: conv2d and maxpool, forward and backward.

Two interchangeable implementations of each kernel: numba-jitted loops and a
vectorized numpy path. The public names dispatch on the PREINDEX_NO_NUMBA
flag (see _accel); both paths agree to float64 roundoff and the benchmark in
benchmarks/bench_kernels.py compares their throughput.

Layout: activations [n, h, w, c], conv weights [kh, kw, c_in, f], valid
padding, square stride.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import NUMBA_ENABLED, njit


@njit(cache=True)
def _conv2d_forward_nb(x, w, b, stride):
    n, h, wid, cin = x.shape
    kh, kw, _, f = w.shape
    oh = (h - kh) // stride + 1
    ow = (wid - kw) // stride + 1
    out = np.empty((n, oh, ow, f))
    for i in range(n):
        for y in range(oh):
            for xx in range(ow):
                for fi in range(f):
                    out[i, y, xx, fi] = b[fi]
                for ki in range(kh):
                    for kj in range(kw):
                        for c in range(cin):
                            xv = x[i, y * stride + ki, xx * stride + kj, c]
                            for fi in range(f):
                                out[i, y, xx, fi] += xv * w[ki, kj, c, fi]
    return out


@njit(cache=True)
def _conv2d_backward_nb(x, w, dy, stride):
    n, h, wid, cin = x.shape
    kh, kw, _, f = w.shape
    oh, ow = dy.shape[1], dy.shape[2]
    dx = np.zeros((n, h, wid, cin))
    dw = np.zeros((kh, kw, cin, f))
    db = np.zeros(f)
    for i in range(n):
        for y in range(oh):
            for xx in range(ow):
                for fi in range(f):
                    db[fi] += dy[i, y, xx, fi]
                for ki in range(kh):
                    for kj in range(kw):
                        for c in range(cin):
                            xv = x[i, y * stride + ki, xx * stride + kj, c]
                            acc = 0.0
                            for fi in range(f):
                                g = dy[i, y, xx, fi]
                                dw[ki, kj, c, fi] += xv * g
                                acc += w[ki, kj, c, fi] * g
                            dx[i, y * stride + ki, xx * stride + kj, c] += acc
    return dx, dw, db


@njit(cache=True)
def _maxpool_forward_nb(x, pool, stride):
    n, h, wid, c = x.shape
    oh = (h - pool) // stride + 1
    ow = (wid - pool) // stride + 1
    out = np.empty((n, oh, ow, c))
    arg = np.empty((n, oh, ow, c), dtype=np.int64)
    for i in range(n):
        for y in range(oh):
            for xx in range(ow):
                for ch in range(c):
                    best = -np.inf
                    besti = 0
                    for di in range(pool):
                        for dj in range(pool):
                            v = x[i, y * stride + di, xx * stride + dj, ch]
                            if v > best:
                                best = v
                                besti = (y * stride + di) * wid + (xx * stride + dj)
                    out[i, y, xx, ch] = best
                    arg[i, y, xx, ch] = besti
    return out, arg


@njit(cache=True)
def _maxpool_backward_nb(dy, arg, h, wid):
    n, oh, ow, c = dy.shape
    dx = np.zeros((n, h, wid, c))
    for i in range(n):
        for y in range(oh):
            for xx in range(ow):
                for ch in range(c):
                    flat = arg[i, y, xx, ch]
                    dx[i, flat // wid, flat % wid, ch] += dy[i, y, xx, ch]
    return dx


def _conv_patches(x, kh, kw, stride):
    # [n, oh, ow, cin, kh, kw]
    return sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]


def _conv2d_forward_np(x, w, b, stride):
    kh, kw = w.shape[0], w.shape[1]
    patches = _conv_patches(x, kh, kw, stride)
    return np.einsum("nyxckl,klcf->nyxf", patches, w, optimize=True) + b


def _conv2d_backward_np(x, w, dy, stride):
    kh, kw = w.shape[0], w.shape[1]
    patches = _conv_patches(x, kh, kw, stride)
    dw = np.einsum("nyxckl,nyxf->klcf", patches, dy, optimize=True)
    db = dy.sum(axis=(0, 1, 2))
    dx = np.zeros_like(x)
    oh, ow = dy.shape[1], dy.shape[2]
    for ki in range(kh):
        for kj in range(kw):
            contrib = dy @ w[ki, kj].T  # [n, oh, ow, cin]
            dx[:, ki : ki + oh * stride : stride, kj : kj + ow * stride : stride, :] += contrib
    return dx, dw, db


def _maxpool_forward_np(x, pool, stride):
    n, h, wid, c = x.shape
    windows = sliding_window_view(x, (pool, pool), axis=(1, 2))[:, ::stride, ::stride]
    flat = windows.reshape(windows.shape[:4] + (pool * pool,))
    offs = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, offs[..., None], axis=-1)[..., 0]
    oy = np.arange(offs.shape[1])[None, :, None, None] * stride
    ox = np.arange(offs.shape[2])[None, None, :, None] * stride
    arg = (oy + offs // pool) * wid + (ox + offs % pool)
    return out, arg.astype(np.int64)


def _maxpool_backward_np(dy, arg, h, wid):
    n, oh, ow, c = dy.shape
    dx = np.zeros((n, h * wid, c))
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, None, None, :]
    np.add.at(dx, (np.broadcast_to(ni, dy.shape), arg, np.broadcast_to(ci, dy.shape)), dy)
    return dx.reshape(n, h, wid, c)


if NUMBA_ENABLED:
    conv2d_forward = _conv2d_forward_nb
    conv2d_backward = _conv2d_backward_nb
    maxpool_forward = _maxpool_forward_nb
    maxpool_backward = _maxpool_backward_nb
else:
    conv2d_forward = _conv2d_forward_np
    conv2d_backward = _conv2d_backward_np
    maxpool_forward = _maxpool_forward_np
    maxpool_backward = _maxpool_backward_np
