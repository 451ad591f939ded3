"""Differentiable operations on Vars.

Layout convention is (N, C, H, W) for feature maps. Convolution heavy
lifting is delegated to docsr.kernels (compiled core or numpy fallback);
everything else is plain numpy.
"""

from __future__ import annotations

import numpy as np

from docsr import kernels, resample
from docsr.nn.autodiff import Var


def _bwd(parent: Var, fn):
    """Helper: route gradient g through fn into parent if it wants grads."""
    def apply(g):
        parent.accumulate(fn(g))
    return apply if parent.requires_grad else (lambda g: None)


def _join(*closures):
    active = [c for c in closures if c is not None]

    def backward(g):
        for c in active:
            c(g)
    return backward


# ---------------------------------------------------------------- conv ----

def conv2d(x: Var, w: Var, b: Var | None = None, stride: int = 1, pad: int = 0) -> Var:
    y = kernels.conv2d_forward(x.data, w.data, stride, pad)
    if b is not None:
        y = y + b.data[None, :, None, None]
    kh, kw = w.data.shape[2], w.data.shape[3]
    in_h, in_w = x.data.shape[2], x.data.shape[3]

    def backward(g):
        if x.requires_grad:
            x.accumulate(kernels.conv2d_bwd_data(g, w.data, in_h, in_w, stride, pad))
        if w.requires_grad:
            w.accumulate(kernels.conv2d_bwd_weights(x.data, g, kh, kw, stride, pad))
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2, 3)))

    parents = (x, w) if b is None else (x, w, b)
    return Var(y, parents, backward, name="conv2d")


def conv2d_transpose(x: Var, w: Var, b: Var | None = None, stride: int = 1,
                     pad: int = 0, output_padding: int = 0) -> Var:
    """Transposed convolution; w is (Cin_of_the_matching_conv, Cout, ...) ==
    (C_from, C_to, KH, KW) stored as the matching conv's (C_to, C_from) weight."""
    n, c, h, ww = x.data.shape
    kh, kw = w.data.shape[2], w.data.shape[3]
    out_h = (h - 1) * stride - 2 * pad + kh + output_padding
    out_w = (ww - 1) * stride - 2 * pad + kw + output_padding
    y = kernels.conv2d_bwd_data(x.data, w.data, out_h, out_w, stride, pad)
    if b is not None:
        y = y + b.data[None, :, None, None]

    def backward(g):
        if x.requires_grad:
            x.accumulate(kernels.conv2d_forward(g, w.data, stride, pad))
        if w.requires_grad:
            w.accumulate(kernels.conv2d_bwd_weights(g, x.data, kh, kw, stride, pad))
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2, 3)))

    parents = (x, w) if b is None else (x, w, b)
    return Var(y, parents, backward, name="conv2d_transpose")


def pad2d(x: Var, ph: int, pw: int) -> Var:
    """Zero-pad the spatial dims; lets convs take asymmetric padding."""
    y = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    h, w = x.data.shape[2], x.data.shape[3]
    return Var(y, (x,),
               _bwd(x, lambda g: g[:, :, ph:ph + h, pw:pw + w]),
               name="pad2d")


def pixel_shuffle(x: Var, r: int) -> Var:
    n, c, h, w = x.data.shape
    if c % (r * r) != 0:
        raise ValueError(f"channels {c} not divisible by r^2={r * r}")
    co = c // (r * r)
    y = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)

    def backward(g):
        gx = g.reshape(n, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w)
        x.accumulate(gx)

    return Var(np.ascontiguousarray(y), (x,), backward if x.requires_grad else None,
               name="pixel_shuffle")


def maxpool2x2(x: Var) -> Var:
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError("maxpool2x2 requires even spatial dims")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2)
    flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gx = gflat.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        x.accumulate(gx.reshape(n, c, h, w))

    return Var(np.ascontiguousarray(y), (x,), backward if x.requires_grad else None,
               name="maxpool2x2")


# --------------------------------------------------------- activations ----

def relu(x: Var) -> Var:
    mask = x.data > 0
    return Var(x.data * mask, (x,), _bwd(x, lambda g: g * mask), name="relu")


def prelu(x: Var, alpha: Var) -> Var:
    """Channelwise PReLU; alpha has shape (C,)."""
    a = alpha.data[None, :, None, None]
    pos = x.data > 0
    y = np.where(pos, x.data, a * x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate(np.where(pos, g, a * g))
        if alpha.requires_grad:
            alpha.accumulate(np.where(pos, 0.0, g * x.data).sum(axis=(0, 2, 3)))

    return Var(y, (x, alpha), backward, name="prelu")


def sigmoid(x: Var) -> Var:
    # exp overflow saturates to the correct limit (0 or 1); keep it quiet
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-x.data))
    return Var(y, (x,), _bwd(x, lambda g: g * y * (1.0 - y)), name="sigmoid")


def log(x: Var) -> Var:
    return Var(np.log(x.data), (x,), _bwd(x, lambda g: g / x.data), name="log")


# ---------------------------------------------------------- batch norm ----

def batchnorm2d(x: Var, gamma: Var, beta: Var, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool, momentum: float = 0.1,
                eps: float = 1e-5) -> Var:
    """BN over (N, H, W) per channel. Updates running stats in place when
    training; uses them when not."""
    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        # unbiased variance in the running estimate, biased in the batch term
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean, running_var

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    y = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gk = g * gamma.data[None, :, None, None]
            if training:
                m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
                sum_gk = gk.sum(axis=(0, 2, 3))
                sum_gk_xhat = (gk * xhat).sum(axis=(0, 2, 3))
                gx = (inv[None, :, None, None] / m) * (
                    m * gk
                    - sum_gk[None, :, None, None]
                    - xhat * sum_gk_xhat[None, :, None, None]
                )
            else:
                gx = gk * inv[None, :, None, None]
            x.accumulate(gx)

    return Var(y, (x, gamma, beta), backward, name="batchnorm2d")


# ----------------------------------------------------------- algebra ----

def add(a: Var, b: Var) -> Var:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch {a.data.shape} vs {b.data.shape}")
    return Var(a.data + b.data, (a, b),
               _join(_bwd(a, lambda g: g) if a.requires_grad else None,
                     _bwd(b, lambda g: g) if b.requires_grad else None),
               name="add")


def sub(a: Var, b: Var) -> Var:
    if a.data.shape != b.data.shape:
        raise ValueError(f"sub shape mismatch {a.data.shape} vs {b.data.shape}")
    return Var(a.data - b.data, (a, b),
               _join(_bwd(a, lambda g: g) if a.requires_grad else None,
                     _bwd(b, lambda g: -g) if b.requires_grad else None),
               name="sub")


def mul_const(x: Var, c) -> Var:
    """Multiply by a constant scalar or ndarray (no gradient into c)."""
    c = np.asarray(c)
    return Var(x.data * c, (x,), _bwd(x, lambda g: g * c), name="mul_const")


def add_const(x: Var, c) -> Var:
    c = np.asarray(c)
    return Var(x.data + c, (x,), _bwd(x, lambda g: g), name="add_const")


def absolute(x: Var) -> Var:
    s = np.sign(x.data)
    return Var(np.abs(x.data), (x,), _bwd(x, lambda g: g * s), name="abs")


def square(x: Var) -> Var:
    return Var(x.data * x.data, (x,), _bwd(x, lambda g: 2.0 * g * x.data), name="square")


def concat(vs: list[Var], axis: int = 1) -> Var:
    data = np.concatenate([v.data for v in vs], axis=axis)
    sizes = [v.data.shape[axis] for v in vs]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for v, lo, hi in zip(vs, offsets[:-1], offsets[1:]):
            if v.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                v.accumulate(g[tuple(sl)])

    return Var(data, tuple(vs), backward, name="concat")


def mean_all(x: Var) -> Var:
    n = x.data.size
    return Var(np.asarray(x.data.mean()), (x,),
               _bwd(x, lambda g: np.full_like(x.data, float(g) / n)), name="mean")


def sum_all(x: Var) -> Var:
    return Var(np.asarray(x.data.sum()), (x,),
               _bwd(x, lambda g: np.full_like(x.data, float(g))), name="sum")


def resample2d(x: Var, out_h: int, out_w: int, antialias: bool = True) -> Var:
    """Bicubic resize of an (N, C, H, W) Var; exact linear-op gradient."""
    mh = resample.resample_matrix(x.data.shape[2], out_h, antialias).astype(x.data.dtype)
    mw = resample.resample_matrix(x.data.shape[3], out_w, antialias).astype(x.data.dtype)
    y = resample.resample_nchw(x.data, mh, mw)
    return Var(y, (x,), _bwd(x, lambda g: resample.resample_nchw_grad(g, mh, mw)),
               name="resample2d")
