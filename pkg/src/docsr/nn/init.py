"""Seeded parameter initialization.

All draws come from one generator in a fixed layer order, so a (seed,
config) pair maps to exactly one parameter set.
"""

from __future__ import annotations

import numpy as np


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape).astype(dtype)


def conv_weight(rng: np.random.Generator, c_out: int, c_in: int, k,
                dtype=np.float32) -> np.ndarray:
    kh, kw = (k, k) if isinstance(k, int) else k
    return he_normal(rng, (c_out, c_in, kh, kw), fan_in=c_in * kh * kw, dtype=dtype)


def zeros(shape, dtype=np.float32) -> np.ndarray:
    return np.zeros(shape, dtype=dtype)


def ones(shape, dtype=np.float32) -> np.ndarray:
    return np.ones(shape, dtype=dtype)


def full(shape, value, dtype=np.float32) -> np.ndarray:
    return np.full(shape, value, dtype=dtype)
