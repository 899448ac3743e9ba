"""Benchmark the compiled kernels against the pure NumPy fallbacks.

Run with: python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import math
import time

import numpy as np

from lidar4d._kernels import pure

try:
    from lidar4d._kernels import _native
except ImportError:
    _native = None


def _timeit(fn, repeat):
    best = math.inf
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def _zbuffer_case(rng, n, height=32, width=1024):
    us = rng.integers(0, width, n)
    vs = rng.integers(0, height, n)
    depth = rng.uniform(0.5, 80.0, n)
    intensity = rng.uniform(0.0, 1.0, n)
    return (us, vs, depth, intensity, height, width)


def _boxes(rng, count):
    return np.column_stack(
        [
            rng.uniform(-30, 30, (count, 2)),
            rng.uniform(-2, 0, (count, 1)),
            rng.uniform(0.5, 6.0, (count, 3)),
            rng.uniform(-math.pi, math.pi, (count, 1)),
        ]
    )


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    cases = []
    zb = _zbuffer_case(rng, 200_000)
    cases.append(("zbuffer_project (200k pts, 32x1024)", "zbuffer_project", zb))
    pts = rng.uniform(-40, 40, (200_000, 3))
    boxes = _boxes(rng, 24)
    cases.append(("assign_points_to_boxes (200k pts, 24 boxes)", "assign_points_to_boxes", (pts, boxes)))
    dirs = rng.normal(size=(32 * 1024, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    cases.append(("ray_box_hits (32k rays, 24 boxes)", "ray_box_hits", (dirs, np.zeros(3), boxes)))

    print(f"{'kernel':45s} {'pure':>10s} {'native':>10s} {'speedup':>8s}")
    for label, name, case_args in cases:
        t_pure = _timeit(lambda: getattr(pure, name)(*case_args), args.repeat)
        if _native is None:
            print(f"{label:45s} {t_pure * 1e3:9.2f}ms {'-':>10s} {'-':>8s}")
            continue
        t_native = _timeit(lambda: getattr(_native, name)(*case_args), args.repeat)
        print(
            f"{label:45s} {t_pure * 1e3:9.2f}ms {t_native * 1e3:9.2f}ms "
            f"{t_pure / t_native:7.1f}x"
        )
    if _native is None:
        print("\ncompiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
