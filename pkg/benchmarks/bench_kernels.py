"""Compare the compiled and numpy convolution backends shape by shape.

Run:  python3 benchmarks/bench_kernels.py [--repeats N]

Shapes cover the hot paths of this package: the SR model convolutions
(small channel counts, large spatial extent) and the detector trunk
(wide channels, small spatial extent). Reports forward and both backward
kernels. The numbers decide the default backend selection; see
docsr/kernels/__init__.py.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from docsr.kernels import conv_numpy

try:
    from docsr.kernels import _conv_cy
except ImportError:
    _conv_cy = None

# (label, N, C_in, H, W, C_out, k, pad)
SHAPES = [
    ("srcnn head   3->64 k9 @96x128", 4, 3, 96, 128, 64, 9, 4),
    ("srcnn mid   64->32 k1 @96x128", 4, 64, 96, 128, 32, 1, 0),
    ("srcnn tail  32->3  k5 @96x128", 4, 32, 96, 128, 3, 5, 2),
    ("fsrcnn map  12->12 k3 @24x32 ", 4, 12, 24, 32, 12, 3, 1),
    ("resnet blk  64->64 k3 @24x32 ", 4, 64, 24, 32, 64, 3, 1),
    ("toy det    128->512 k3 @8x12 ", 4, 128, 8, 12, 512, 3, 1),
    ("det head   512->20 k1 @8x12  ", 4, 512, 8, 12, 20, 1, 0),
]


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(repeats: int) -> None:
    if _conv_cy is None:
        print("compiled backend not built; showing numpy only")
    header = f"{'shape':<32} {'kernel':<12} {'numpy':>10} {'cython':>10} {'ratio':>7}"
    print(header)
    print("-" * len(header))
    rng = np.random.default_rng(0)
    for label, n, ci, h, w, co, k, pad in SHAPES:
        x = rng.standard_normal((n, ci, h, w), dtype=np.float32)
        wt = rng.standard_normal((co, ci, k, k), dtype=np.float32)
        dy = np.asarray(conv_numpy.conv2d_forward(x, wt, 1, pad))
        cases = {
            "forward": (lambda m: m.conv2d_forward(x, wt, 1, pad)),
            "bwd_weights": (lambda m: m.conv2d_bwd_weights(x, dy, k, k, 1, pad)),
            "bwd_data": (lambda m: m.conv2d_bwd_data(dy, wt, h, w, 1, pad)),
        }
        for name, call in cases.items():
            t_np = _time(lambda: call(conv_numpy), repeats)
            if _conv_cy is not None:
                t_cy = _time(lambda: call(_conv_cy), repeats)
                ratio = t_cy / t_np
                print(f"{label:<32} {name:<12} {t_np * 1e3:9.2f}ms {t_cy * 1e3:9.2f}ms "
                      f"{ratio:6.2f}x")
            else:
                print(f"{label:<32} {name:<12} {t_np * 1e3:9.2f}ms {'-':>10} {'-':>7}")
    print("\nratio > 1 means the numpy backend is faster for that shape.")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    bench(args.repeats)


if __name__ == "__main__":
    main()
