#!/usr/bin/env python3
"""Benchmark the compiled coordinate-sweep kernel against the pure-Python
fallback on weighted-lasso subproblems of increasing size.

Usage: python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from esteq import _kernels_py

try:
    from esteq import _kernels_cy
except ImportError:
    _kernels_cy = None


def make_problem(rng, p, density=0.1):
    n = 4 * p
    X = rng.normal(size=(n, p))
    Q = X.T @ X / n
    theta_true = np.zeros(p)
    k = max(1, int(density * p))
    theta_true[:k] = rng.uniform(1.0, 3.0, size=k)
    y = X @ theta_true + 0.3 * rng.normal(size=n)
    b = -X.T @ y / n
    lam1 = np.full(p, 0.2)
    return Q, b, lam1


def time_kernel(kernel, Q, b, lam1, repeats):
    best = np.inf
    sweeps = 0
    for _ in range(repeats):
        theta = np.zeros(Q.shape[0])
        t0 = time.perf_counter()
        sweeps, _ = kernel.penalized_sweeps(Q, b, theta, lam1, 0.0,
                                            10000, 1e-12)
        best = min(best, time.perf_counter() - t0)
    return best, sweeps, theta


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'p':>6} {'python (ms)':>12} {'cython (ms)':>12} "
          f"{'speedup':>8} {'sweeps':>7}")
    for p in (25, 50, 100, 200, 400):
        Q, b, lam1 = make_problem(rng, p)
        t_py, sweeps, theta_py = time_kernel(_kernels_py, Q, b, lam1,
                                             args.repeats)
        if _kernels_cy is None:
            print(f"{p:>6} {t_py * 1e3:>12.2f} {'n/a':>12} {'n/a':>8} "
                  f"{sweeps:>7}")
            continue
        t_cy, sweeps_cy, theta_cy = time_kernel(_kernels_cy, Q, b, lam1,
                                                args.repeats)
        theta_a = np.zeros(p)
        theta_b = np.zeros(p)
        _kernels_py.penalized_sweeps(Q, b, theta_a, lam1, 0.0, 10000, 1e-12)
        _kernels_cy.penalized_sweeps(Q, b, theta_b, lam1, 0.0, 10000, 1e-12)
        agree = "ok" if np.array_equal(theta_a, theta_b) else "MISMATCH"
        print(f"{p:>6} {t_py * 1e3:>12.2f} {t_cy * 1e3:>12.2f} "
              f"{t_py / t_cy:>8.1f} {sweeps:>7}  bitwise {agree}")
    if _kernels_cy is None:
        print("compiled kernel unavailable; build with "
              "`python setup.py build_ext --inplace`")


if __name__ == "__main__":
    main()
