"""Time the numba and numpy versions of the per-pixel kernels.

    python3 benchmarks/bench_kernels.py [--size 512] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from polarsep import _kernels


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    n = args.size
    rng = np.random.default_rng(0)
    img = rng.random((n, n, 3))
    sy = rng.uniform(-2, n + 2, size=(n, n))
    sx = rng.uniform(-2, n + 2, size=(n, n))
    mean, c1, c2 = rng.random((3, n, n, 3))
    cases = {
        "bilinear_sample": (
            lambda: _kernels.bilinear_sample_numba(img, sy, sx),
            lambda: _kernels.bilinear_sample_numpy(img, sy, sx),
        ),
        "canonical_phase": (
            lambda: _kernels.canonical_phase_numba(mean, c1, c2),
            lambda: _kernels.canonical_phase_numpy(mean, c1, c2),
        ),
    }
    print(f"{'kernel':<18}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}   ({n}x{n}x3)")
    for name, (fast, slow) in cases.items():
        fast()  # compile
        t_fast = min(timeit.repeat(fast, number=1, repeat=args.repeat)) * 1e3
        t_slow = min(timeit.repeat(slow, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<18}{t_fast:>10.2f}{t_slow:>10.2f}{t_slow / t_fast:>8.1f}x")


if __name__ == "__main__":
    main()
