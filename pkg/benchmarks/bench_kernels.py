#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the pure-numpy fallback.

Runs the two hot kernels (multi-level hash-grid interpolation and
volume-rendering weight composition) forward and backward at a
training-shaped workload and prints a speedup table.

    python benchmarks/bench_kernels.py [--points 65536] [--repeats 5]
"""

import argparse
import time

import numpy as np

from lidarfield.kernels import get_backend


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--points", type=int, default=65536,
                    help="query points per hash-grid call")
    ap.add_argument("--rays", type=int, default=1024)
    ap.add_argument("--samples", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    tables = rng.normal(size=(4, 2 ** 14, 2))
    x01 = rng.uniform(size=(args.points, 3))
    res = np.array([16, 128, 1024, 8192], dtype=np.int64)
    gout = rng.normal(size=(args.points, 8))
    sdelta = rng.uniform(0, 2, size=(args.rays, args.samples))
    g = rng.normal(size=sdelta.shape)

    backends = {}
    for name in ("numpy", "cython"):
        try:
            backends[name] = get_backend(name)
        except ImportError:
            print(f"({name} backend unavailable, skipping)")

    cases = {
        "hash_grid_forward": lambda b: b.hash_grid_forward(tables, x01, res),
        "hash_grid_backward": lambda b: b.hash_grid_backward(gout, x01, res,
                                                             tables.shape),
        "composite_forward": lambda b: b.composite_weights_forward(sdelta),
        "composite_backward": lambda b: b.composite_weights_backward(
            g, sdelta, *b.composite_weights_forward(sdelta)),
    }

    print(f"workload: {args.points} points x 4 levels, "
          f"{args.rays} rays x {args.samples} samples (float64)\n")
    header = f"{'kernel':24s}" + "".join(f"{n:>12s}" for n in backends) + \
        ("     speedup" if len(backends) == 2 else "")
    print(header)
    print("-" * len(header))
    for case, fn in cases.items():
        times = {n: timeit(lambda b=b: fn(b), args.repeats)
                 for n, b in backends.items()}
        row = f"{case:24s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times.values())
        if len(times) == 2:
            t = list(times.values())
            row += f"{t[0] / t[1]:11.1f}x"
        print(row)

    # agreement check at the benchmark workload
    if len(backends) == 2:
        a = backends["numpy"].hash_grid_forward(tables, x01, res)
        b = backends["cython"].hash_grid_forward(tables, x01, res)
        print(f"\nmax |numpy - cython| on hash features: {np.abs(a - b).max():.3e}")


if __name__ == "__main__":
    main()
