"""Bicubic resampling as precomputed per-axis weight matrices.

One implementation serves three callers: HR->LR degradation in the data
pipeline, the pre-upsampling stage of SRCNN, and the differentiable
downsampling inside the LR-consistency loss (the matrices are linear, so
the transpose is the exact gradient).

Kernel: Catmull-Rom cubic (a = -0.5). Downscaling stretches the kernel
support by the scale ratio (antialiasing); taps falling outside the image
are dropped and each output row of weights is renormalized to sum to one.
This matches the conventional float-mode bicubic resize of mainstream
imaging libraries, which the tests use as an independent oracle.
"""

from __future__ import annotations

import functools

import numpy as np

_A = -0.5  # Catmull-Rom


def _cubic(t: np.ndarray) -> np.ndarray:
    t = np.abs(t)
    t2 = t * t
    t3 = t2 * t
    out = np.where(
        t <= 1.0,
        (_A + 2.0) * t3 - (_A + 3.0) * t2 + 1.0,
        np.where(t < 2.0, _A * t3 - 5.0 * _A * t2 + 8.0 * _A * t - 4.0 * _A, 0.0),
    )
    return out


@functools.lru_cache(maxsize=256)
def resample_matrix(n_in: int, n_out: int, antialias: bool = True) -> np.ndarray:
    """Dense (n_out, n_in) weight matrix for one axis, float64."""
    if n_in < 1 or n_out < 1:
        raise ValueError("sizes must be positive")
    ratio = n_in / n_out
    kscale = max(ratio, 1.0) if antialias else 1.0
    support = 2.0 * kscale

    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        center = (i + 0.5) * ratio - 0.5
        lo = max(int(np.floor(center - support + 0.5)), 0)
        hi = min(int(np.floor(center + support + 0.5)), n_in - 1)
        taps = np.arange(lo, hi + 1)
        w = _cubic((taps - center) / kscale)
        s = w.sum()
        if s == 0.0:
            raise RuntimeError("empty kernel window")
        mat[i, lo:hi + 1] = w / s
    return mat


def resample_image(img: np.ndarray, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Resample an (H, W, C) image to (out_h, out_w, C)."""
    mh = resample_matrix(img.shape[0], out_h, antialias).astype(img.dtype)
    mw = resample_matrix(img.shape[1], out_w, antialias).astype(img.dtype)
    out = np.tensordot(mh, img, axes=(1, 0))           # (out_h, W, C)
    out = np.tensordot(out, mw, axes=(1, 1))           # (out_h, C, out_w)
    return np.ascontiguousarray(np.swapaxes(out, 1, 2))


def resample_nchw(x: np.ndarray, mh: np.ndarray, mw: np.ndarray) -> np.ndarray:
    """Apply per-axis matrices to a batched (N, C, H, W) array."""
    out = np.einsum("oh,nchw->ncow", mh, x, optimize=True)
    out = np.einsum("pw,ncow->ncop", mw, out, optimize=True)
    return out


def resample_nchw_grad(dy: np.ndarray, mh: np.ndarray, mw: np.ndarray) -> np.ndarray:
    """Gradient of resample_nchw w.r.t. its input (transpose matrices)."""
    return resample_nchw(dy, mh.T, mw.T)
