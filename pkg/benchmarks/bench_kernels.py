"""Compare the compiled and pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints the median wall time per call for each backend and the speed-up.
"""
import argparse
import statistics
import time

import numpy as np

from asfderain import _pykernels, kernels

try:
    from asfderain import _ckernels
except ImportError:
    _ckernels = None


def timeit(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(size):
    rng = np.random.default_rng(0)
    n = 300
    x0 = rng.uniform(0, size, n)
    y0 = rng.uniform(0, size, n)
    segs = (x0, y0, x0 + rng.uniform(-4, 4, n), y0 + rng.uniform(4, 18, n),
            rng.uniform(0.6, 2.0, n), rng.uniform(0.2, 0.8, n))
    a = rng.integers(0, 256, (size, size))
    b = np.roll(a, (1, 2), axis=(0, 1))
    init = np.zeros((2, size, size), dtype=np.int64)
    return {
        f"rasterize {n} streaks {size}x{size}": lambda impl: kernels.rasterize_segments(*segs, size, size, impl=impl),
        f"block match r=3 {size}x{size}": lambda impl: kernels.block_match(a, b, init, 3, 3, impl=impl),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=64)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled kernels not built; only the Python backend is timed")
    print(f"{'kernel':36s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speed-up':>9s}")
    for name, fn in cases(args.size).items():
        t_py = timeit(lambda: fn(_pykernels), args.repeat)
        if _ckernels is None:
            print(f"{name:36s} {1e3 * t_py:12.2f} {'-':>12s} {'-':>9s}")
            continue
        t_c = timeit(lambda: fn(_ckernels), args.repeat)
        print(f"{name:36s} {1e3 * t_py:12.2f} {1e3 * t_c:12.2f} {t_py / t_c:8.1f}x")


if __name__ == "__main__":
    main()
