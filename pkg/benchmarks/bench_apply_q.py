"""Time Q_{d,h} application: numba kernel vs the numpy fallback.

    python benchmarks/bench_apply_q.py [--sizes 80 160 320] [--repeat 20]
"""
import argparse
import time

import numpy as np

from lcbcfd.kernels import USE_NUMBA, GridQ


def coefficients(shape, rng):
    c11 = 1.0 + 0.1 * rng.random(shape)
    c22 = 1.0 + 0.1 * rng.random(shape)
    c12 = 0.05 * rng.random(shape)
    return c11, c12, c22, rng.random(shape), rng.random(shape), rng.random(shape)


def best_of(fn, U, repeat):
    fn(U)  # warm-up (and jit compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(U)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[80, 160, 320])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not USE_NUMBA:
        print("numba disabled (LCBC_NO_NUMBA set or numba missing); only the numpy path is timed")
    rng = np.random.default_rng(0)
    print(f"{'d':>2} {'n':>5} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8} {'max diff':>10}")
    for d in (2, 4, 6):
        for n in args.sizes:
            p = d // 2
            shape = (n + 1 + 2 * p, n + 1 + 2 * p)
            coeffs = coefficients(shape, rng)
            U = rng.standard_normal(shape)
            qn = GridQ(coeffs, d, 1.0 / n, 1.0 / n, use_numba=False)
            tn = best_of(qn, U, args.repeat)
            if USE_NUMBA:
                qj = GridQ(coeffs, d, 1.0 / n, 1.0 / n, use_numba=True)
                tj = best_of(qj, U, args.repeat)
                a, b = qn(U)[p:-p, p:-p], qj(U)[p:-p, p:-p]
                diff = np.max(np.abs(a - b)) / np.max(np.abs(a))
                print(f"{d:2d} {n:5d} {1e3 * tn:10.3f} {1e3 * tj:10.3f} {tn / tj:8.2f} {diff:10.2e}")
            else:
                print(f"{d:2d} {n:5d} {1e3 * tn:10.3f} {'-':>10} {'-':>8} {'-':>10}")


if __name__ == "__main__":
    main()
