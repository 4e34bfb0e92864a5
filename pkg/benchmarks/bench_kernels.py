"""Benchmark the numba and numpy convolution kernels on the model's shapes.

Run from the repository root:

    python benchmarks/bench_kernels.py [--batch 64] [--repeats 30]

Shapes mirror the four extractor blocks on 32x32 inputs.  The numba kernels
are compiled once (warm-up pass) before timing.  Whichever backend wins here
can be pinned for a session with JITTERLAB_ACCEL=numba|numpy.
"""

import argparse
import time

import numpy as np

from jitterlab import accel

BLOCKS = [
    ("conv1 1->8    32x32", 1, 8, 32),
    ("conv2 8->16   16x16", 8, 16, 16),
    ("conv3 16->32  8x8", 16, 32, 8),
    ("conv4 32->64  4x4", 32, 64, 4),
]


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()

    if accel.conv2d_forward_numba is None:
        print("numba is not available; nothing to compare")
        return

    rng = np.random.default_rng(0)
    print(f"batch={args.batch}, best of {args.repeats} runs, times in ms")
    header = f"{'shape':24s} {'dir':8s} {'numpy':>9s} {'numba':>9s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for name, cin, cout, hw in BLOCKS:
        x = rng.uniform(0, 1, size=(args.batch, cin, hw, hw)).astype(np.float32)
        w = (rng.normal(size=(cout, cin, 3, 3)) * 0.1).astype(np.float32)
        b = np.zeros(cout, dtype=np.float32)
        out = accel.conv2d_forward_numpy(x, w, b, 2, 1)
        g = rng.normal(size=out.shape).astype(np.float32)

        # warm-up compiles the numba kernels for this dtype
        accel.conv2d_forward_numba(x, w, b, 2, 1)
        accel.conv2d_backward_numba(x, w, 2, 1, g)

        t_np_f = _time(lambda: accel.conv2d_forward_numpy(x, w, b, 2, 1), args.repeats)
        t_nb_f = _time(lambda: accel.conv2d_forward_numba(x, w, b, 2, 1), args.repeats)
        t_np_b = _time(lambda: accel.conv2d_backward_numpy(x, w, 2, 1, g), args.repeats)
        t_nb_b = _time(lambda: accel.conv2d_backward_numba(x, w, 2, 1, g), args.repeats)
        print(f"{name:24s} {'forward':8s} {t_np_f*1e3:9.3f} {t_nb_f*1e3:9.3f} "
              f"{t_np_f/t_nb_f:7.2f}x")
        print(f"{'':24s} {'backward':8s} {t_np_b*1e3:9.3f} {t_nb_b*1e3:9.3f} "
              f"{t_np_b/t_nb_b:7.2f}x")


if __name__ == "__main__":
    main()
