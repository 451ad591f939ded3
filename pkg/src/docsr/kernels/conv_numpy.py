"""Pure-numpy convolution kernels (im2col + BLAS matmul).

Fallback backend used when the compiled extension is unavailable. All
three primitives share the (N, C, H, W) layout and accept float32 or
float64 arrays; weights are (Cout, Cin, KH, KW).
"""

from __future__ import annotations

import numpy as np


def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C*KH*KW, HO*WO) patch matrix."""
    n, c, h, w = x.shape
    ho = _out_size(h, kh, stride, pad)
    wo = _out_size(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    sn, sc, sh, sw = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return view.reshape(n, c * kh * kw, ho * wo)


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    n, c, h, ww = x.shape
    co, ci, kh, kw = w.shape
    if ci != c:
        raise ValueError(f"channel mismatch: input {c}, weight {ci}")
    ho = _out_size(h, kh, stride, pad)
    wo = _out_size(ww, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ValueError("kernel larger than padded input")
    cols = _im2col(x, kh, kw, stride, pad)
    wm = w.reshape(co, ci * kh * kw)
    # (CO, C*KH*KW) @ (C*KH*KW, N*L) in one GEMM
    out = (wm @ cols.transpose(1, 0, 2).reshape(ci * kh * kw, n * ho * wo))
    out = out.reshape(co, n, ho, wo).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out)


def conv2d_bwd_weights(x: np.ndarray, dy: np.ndarray, kh: int, kw: int,
                       stride: int = 1, pad: int = 0) -> np.ndarray:
    n, c, h, w = x.shape
    _, co, ho, wo = dy.shape
    cols = _im2col(x, kh, kw, stride, pad)                     # (N, C*KH*KW, L)
    dym = dy.transpose(1, 0, 2, 3).reshape(co, n * ho * wo)    # (CO, N*L)
    colsm = cols.transpose(1, 0, 2).reshape(c * kh * kw, n * ho * wo)
    dw = dym @ colsm.T
    return dw.reshape(co, c, kh, kw)


def conv2d_bwd_data(dy: np.ndarray, w: np.ndarray, in_h: int, in_w: int,
                    stride: int = 1, pad: int = 0) -> np.ndarray:
    """Scatter w^T @ dy back onto the (padded) input grid, then crop."""
    n, co, ho, wo = dy.shape
    _, ci, kh, kw = w.shape
    wm = w.reshape(co, ci * kh * kw)
    cols = (wm.T @ dy.transpose(1, 0, 2, 3).reshape(co, n * ho * wo))
    cols = cols.reshape(ci, kh, kw, n, ho, wo)

    dxp = np.zeros((n, ci, in_h + 2 * pad, in_w + 2 * pad), dtype=dy.dtype)
    for i in range(kh):
        hi = i + stride * ho
        for j in range(kw):
            wj = j + stride * wo
            dxp[:, :, i:hi:stride, j:wj:stride] += cols[:, i, j].transpose(1, 0, 2, 3)
    if pad:
        dxp = dxp[:, :, pad:pad + in_h, pad:pad + in_w]
    return np.ascontiguousarray(dxp)
