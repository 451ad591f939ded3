"""Convolution kernel backend selection.

Two interchangeable backends implement the same three primitives: the
numpy im2col+GEMM path and a compiled Cython direct-convolution core.
Selection happens once at import from `DOCSR_KERNELS` ("auto", "numpy",
or "cython"). "auto" resolves to numpy: on BLAS-backed numpy builds the
GEMM path is faster by an order of magnitude for the channel-heavy
shapes this package runs (measure your own machine with
`benchmarks/bench_kernels.py`); the compiled core is worthwhile where
BLAS is weak or for few-output-channel convolutions, and stays opt-in.
Both return the same values to float32 round-off, so a run's backend
choice never changes its course, but bit-exact reproducibility holds
only within one backend.
"""

from __future__ import annotations

import os

from docsr.kernels import conv_numpy

try:
    from docsr.kernels import _conv_cy
except ImportError:
    _conv_cy = None

_requested = os.environ.get("DOCSR_KERNELS", "auto").lower()
if _requested not in ("auto", "cython", "numpy"):
    raise RuntimeError(f"DOCSR_KERNELS must be auto|cython|numpy, got {_requested!r}")
if _requested == "cython" and _conv_cy is None:
    raise RuntimeError("DOCSR_KERNELS=cython but the compiled extension is not available")

_use_cy = _requested == "cython"
_impl = _conv_cy if _use_cy else conv_numpy

BACKEND = "cython" if _use_cy else "numpy"


def backend_name() -> str:
    return BACKEND


def _ascontig(a):
    import numpy as np

    return np.ascontiguousarray(a)


if _use_cy:
    # memoryview kernels require C-contiguous input
    def conv2d_forward(x, w, stride=1, pad=0):
        return _impl.conv2d_forward(_ascontig(x), _ascontig(w), stride, pad)

    def conv2d_bwd_weights(x, dy, kh, kw, stride=1, pad=0):
        return _impl.conv2d_bwd_weights(_ascontig(x), _ascontig(dy), kh, kw, stride, pad)

    def conv2d_bwd_data(dy, w, in_h, in_w, stride=1, pad=0):
        return _impl.conv2d_bwd_data(_ascontig(dy), _ascontig(w), in_h, in_w, stride, pad)
else:
    conv2d_forward = conv_numpy.conv2d_forward
    conv2d_bwd_weights = conv_numpy.conv2d_bwd_weights
    conv2d_bwd_data = conv_numpy.conv2d_bwd_data

__all__ = [
    "BACKEND",
    "backend_name",
    "conv2d_forward",
    "conv2d_bwd_weights",
    "conv2d_bwd_data",
    "conv_numpy",
]
