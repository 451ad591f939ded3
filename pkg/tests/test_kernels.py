"""Convolution kernel tests: brute-force oracle, backend agreement, and
the DOCSR_KERNELS selection contract."""

import os
import subprocess
import sys

import numpy as np
import pytest

from docsr.kernels import BACKEND, backend_name, conv_numpy

try:
    from docsr.kernels import _conv_cy
except ImportError:
    _conv_cy = None

needs_cython = pytest.mark.skipif(_conv_cy is None, reason="compiled core not built")


def conv2d_loops(x, w, stride=1, pad=0):
    """Seven nested loops; the independent oracle."""
    n, c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        h, wd = h + 2 * pad, wd + 2 * pad
    oh = (h - kh) // stride + 1
    ow = (wd - kw) // stride + 1
    out = np.zeros((n, c_out, oh, ow), dtype=np.float64)
    for b in range(n):
        for co in range(c_out):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(c_in):
                        for u in range(kh):
                            for v in range(kw):
                                acc += float(x[b, ci, i * stride + u, j * stride + v]) \
                                    * float(w[co, ci, u, v])
                    out[b, co, i, j] = acc
    return out


def rand(rng, *shape):
    return rng.standard_normal(shape).astype(np.float32)


CASES = [
    # (n, c_in, h, w, c_out, kh, kw, stride, pad)
    (1, 1, 5, 5, 1, 3, 3, 1, 0),
    (2, 3, 8, 6, 4, 3, 3, 1, 1),
    (1, 2, 9, 9, 3, 5, 5, 1, 2),
    (1, 4, 8, 8, 2, 1, 1, 1, 0),
    (2, 2, 8, 8, 3, 3, 3, 2, 1),
    (1, 1, 6, 10, 2, 1, 9, 1, 0),  # wide kernel (column context conv)
]


class TestForwardOracle:
    @pytest.mark.parametrize("case", CASES)
    def test_numpy_matches_loops(self, case, rng):
        n, c_in, h, w, c_out, kh, kw, stride, pad = case
        x = rand(rng, n, c_in, h, w)
        wt = rand(rng, c_out, c_in, kh, kw)
        got = conv_numpy.conv2d_forward(x, wt, stride, pad)
        expect = conv2d_loops(x, wt, stride, pad)
        np.testing.assert_allclose(got, expect, rtol=1e-5, atol=1e-5)

    @needs_cython
    @pytest.mark.parametrize("case", CASES)
    def test_cython_matches_loops(self, case, rng):
        n, c_in, h, w, c_out, kh, kw, stride, pad = case
        x = rand(rng, n, c_in, h, w)
        wt = rand(rng, c_out, c_in, kh, kw)
        got = np.asarray(_conv_cy.conv2d_forward(x, wt, stride, pad))
        expect = conv2d_loops(x, wt, stride, pad)
        np.testing.assert_allclose(got, expect, rtol=1e-5, atol=1e-5)


class TestBackwardByDotProducts:
    """grad checks via <conv(x), dy> identities instead of finite
    differences: the backward maps are exact adjoints."""

    @pytest.mark.parametrize("case", CASES)
    def test_bwd_data_is_adjoint(self, case, rng):
        n, c_in, h, w, c_out, kh, kw, stride, pad = case
        x = rand(rng, n, c_in, h, w)
        wt = rand(rng, c_out, c_in, kh, kw)
        y = conv_numpy.conv2d_forward(x, wt, stride, pad)
        dy = rand(rng, *y.shape)
        dx = conv_numpy.conv2d_bwd_data(dy, wt, h, w, stride, pad)
        np.testing.assert_allclose(np.sum(y * dy).astype(np.float64),
                                   np.sum(x * dx).astype(np.float64), rtol=1e-3)

    @pytest.mark.parametrize("case", CASES)
    def test_bwd_weights_is_adjoint(self, case, rng):
        n, c_in, h, w, c_out, kh, kw, stride, pad = case
        x = rand(rng, n, c_in, h, w)
        wt = rand(rng, c_out, c_in, kh, kw)
        y = conv_numpy.conv2d_forward(x, wt, stride, pad)
        dy = rand(rng, *y.shape)
        dw = conv_numpy.conv2d_bwd_weights(x, dy, kh, kw, stride, pad)
        np.testing.assert_allclose(np.sum(y * dy).astype(np.float64),
                                   np.sum(wt * dw).astype(np.float64), rtol=1e-3)


@needs_cython
class TestBackendAgreement:
    @pytest.mark.parametrize("case", CASES)
    def test_forward_agreement(self, case, rng):
        n, c_in, h, w, c_out, kh, kw, stride, pad = case
        x = rand(rng, n, c_in, h, w)
        wt = rand(rng, c_out, c_in, kh, kw)
        a = conv_numpy.conv2d_forward(x, wt, stride, pad)
        b = np.asarray(_conv_cy.conv2d_forward(x, wt, stride, pad))
        np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-6)

    def test_backward_agreement(self, rng):
        x = rand(rng, 2, 3, 8, 8)
        wt = rand(rng, 4, 3, 3, 3)
        dy = rand(rng, 2, 4, 8, 8)
        np.testing.assert_allclose(
            conv_numpy.conv2d_bwd_weights(x, dy, 3, 3, 1, 1),
            np.asarray(_conv_cy.conv2d_bwd_weights(x, dy, 3, 3, 1, 1)),
            rtol=1e-4, atol=1e-5)
        np.testing.assert_allclose(
            conv_numpy.conv2d_bwd_data(dy, wt, 8, 8, 1, 1),
            np.asarray(_conv_cy.conv2d_bwd_data(dy, wt, 8, 8, 1, 1)),
            rtol=1e-4, atol=1e-5)

    def test_cython_accepts_read_only_arrays(self, rng):
        # frozen detector parameters arrive with writeable=False
        x = rand(rng, 1, 2, 6, 6)
        wt = rand(rng, 3, 2, 3, 3)
        x.flags.writeable = False
        wt.flags.writeable = False
        np.asarray(_conv_cy.conv2d_forward(x, wt, 1, 1))


class TestSelection:
    def test_reported_backend(self):
        assert backend_name() == BACKEND
        assert BACKEND in ("numpy", "cython")

    def _import_with_env(self, value):
        env = dict(os.environ, DOCSR_KERNELS=value)
        return subprocess.run(
            [sys.executable, "-c", "import docsr.kernels as k; print(k.BACKEND)"],
            capture_output=True, text=True, env=env)

    def test_auto_selects_numpy(self):
        r = self._import_with_env("auto")
        assert r.returncode == 0 and r.stdout.strip() == "numpy"

    def test_explicit_numpy(self):
        r = self._import_with_env("numpy")
        assert r.returncode == 0 and r.stdout.strip() == "numpy"

    @needs_cython
    def test_explicit_cython(self):
        r = self._import_with_env("cython")
        assert r.returncode == 0 and r.stdout.strip() == "cython"

    def test_bad_value_rejected(self):
        r = self._import_with_env("fortran")
        assert r.returncode != 0
        assert "DOCSR_KERNELS" in r.stderr
