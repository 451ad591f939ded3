# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled direct-convolution kernels.

Same contracts as conv_numpy; loops are parallelized so that every output
element is written by exactly one thread, keeping results bit-stable for
any thread count.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from cython.parallel cimport prange

ctypedef fused real:
    float
    double


def conv2d_forward(const real[:, :, :, ::1] x, const real[:, :, :, ::1] w, int stride=1, int pad=0):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wi = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], ci = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    if ci != c:
        raise ValueError(f"channel mismatch: input {c}, weight {ci}")
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (wi + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError("kernel larger than padded input")

    out_np = np.zeros((n, co, ho, wo), dtype=np.asarray(x).dtype)
    cdef real[:, :, :, ::1] out = out_np
    cdef Py_ssize_t b, oc, oy, ox, ic, ky, kx, iy, ix
    cdef Py_ssize_t flat, nco = n * co
    cdef real acc

    for flat in prange(nco, nogil=True, schedule="static"):
        b = flat // co
        oc = flat % co
        for oy in range(ho):
            for ox in range(wo):
                acc = 0
                for ic in range(ci):
                    for ky in range(kh):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            ix = ox * stride + kx - pad
                            if ix < 0 or ix >= wi:
                                continue
                            acc = acc + x[b, ic, iy, ix] * w[oc, ic, ky, kx]
                out[b, oc, oy, ox] = acc
    return out_np


def conv2d_bwd_weights(const real[:, :, :, ::1] x, const real[:, :, :, ::1] dy,
                       int kh, int kw, int stride=1, int pad=0):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wi = x.shape[3]
    cdef Py_ssize_t co = dy.shape[1], ho = dy.shape[2], wo = dy.shape[3]

    dw_np = np.zeros((co, c, kh, kw), dtype=np.asarray(x).dtype)
    cdef real[:, :, :, ::1] dw = dw_np
    cdef Py_ssize_t oc, ic, ky, kx, b, oy, ox, iy, ix
    cdef real acc

    # one thread owns one dw[oc] slab: no write races
    for oc in prange(co, nogil=True, schedule="static"):
        for ic in range(c):
            for ky in range(kh):
                for kx in range(kw):
                    acc = 0
                    for b in range(n):
                        for oy in range(ho):
                            iy = oy * stride + ky - pad
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(wo):
                                ix = ox * stride + kx - pad
                                if ix < 0 or ix >= wi:
                                    continue
                                acc = acc + dy[b, oc, oy, ox] * x[b, ic, iy, ix]
                    dw[oc, ic, ky, kx] = acc
    return dw_np


def conv2d_bwd_data(const real[:, :, :, ::1] dy, const real[:, :, :, ::1] w,
                    int in_h, int in_w, int stride=1, int pad=0):
    cdef Py_ssize_t n = dy.shape[0], co = dy.shape[1], ho = dy.shape[2], wo = dy.shape[3]
    cdef Py_ssize_t ci = w.shape[1], kh = w.shape[2], kw = w.shape[3]

    dx_np = np.zeros((n, ci, in_h, in_w), dtype=np.asarray(dy).dtype)
    cdef real[:, :, :, ::1] dx = dx_np
    cdef Py_ssize_t flat, b, ic, iy, ix, oc, ky, kx, oy, ox, t
    cdef Py_ssize_t nci = n * ci
    cdef real acc

    # gather form: iterate output positions whose window covers (iy, ix)
    for flat in prange(nci, nogil=True, schedule="static"):
        b = flat // ci
        ic = flat % ci
        for iy in range(in_h):
            for ix in range(in_w):
                acc = 0
                for ky in range(kh):
                    t = iy + pad - ky
                    if t < 0 or t % stride != 0:
                        continue
                    oy = t // stride
                    if oy >= ho:
                        continue
                    for kx in range(kw):
                        t = ix + pad - kx
                        if t < 0 or t % stride != 0:
                            continue
                        ox = t // stride
                        if ox >= wo:
                            continue
                        for oc in range(co):
                            acc = acc + dy[b, oc, oy, ox] * w[oc, ic, ky, kx]
                dx[b, ic, iy, ix] = acc
    return dx_np
