"""Time the numba kernels against their numpy fallbacks on identical inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each row reports the best-of-N wall time per call and the max absolute
difference between the two outputs.
"""

import argparse
import time

import numpy as np

from dynaflow import _kernels
from dynaflow.rankpool import build_problem, smooth
from dynaflow.tvl1 import centered_gradient


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def dcd_case(T, dim, seed=0):
    rng = np.random.default_rng(seed)
    X = np.cumsum(rng.normal(size=(T, dim)), axis=0)
    prob = build_problem(smooth(list(X)), 1.0)
    S = prob.frames
    gram = S @ S.T
    pi, pj = prob.pairs
    qdiag = gram[pi, pi] + gram[pj, pj] - 2.0 * gram[pi, pj]
    order = rng.permutation(pi.size)

    def run(kernel):
        alpha = np.zeros(pi.size)
        beta = np.zeros(T)
        scores = np.zeros(T)
        for _ in range(20):
            kernel(gram, pi, pj, qdiag, 0.5, order, alpha, beta, scores)
        return beta

    return run


def tvl1_case(n, seed=0):
    rng = np.random.default_rng(seed)
    I0 = rng.uniform(0, 255, (n, n))
    I1 = np.roll(I0, 1, axis=1)
    gx, gy = centered_gradient(I1)
    grad = gx * gx + gy * gy
    rho_c = I1 - I0

    def run(kernel):
        u1 = np.zeros((n, n))
        u2 = np.zeros((n, n))
        p = [np.zeros((n, n)) for _ in range(4)]
        kernel(gx, gy, grad, rho_c, u1, u2, *p, 0.045, 0.3, 0.25 / 0.3, 50, 0.0)
        return np.stack([u1, u2])

    return run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")

    cases = [
        ("dcd 20 epochs, T=25", dcd_case(25, 64), _kernels.dcd_epoch_numba, _kernels.dcd_epoch_numpy),
        ("dcd 20 epochs, T=60", dcd_case(60, 64), _kernels.dcd_epoch_numba, _kernels.dcd_epoch_numpy),
        ("tvl1 50 iters, 64x64", tvl1_case(64), _kernels.tvl1_inner_numba, _kernels.tvl1_inner_numpy),
        ("tvl1 50 iters, 224x224", tvl1_case(224), _kernels.tvl1_inner_numba, _kernels.tvl1_inner_numpy),
    ]
    print(f"{'case':<26} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8} {'max |diff|':>11}")
    for name, run, fast, slow in cases:
        a = run(fast)  # also triggers compilation
        b = run(slow)
        tf = best_of(lambda: run(fast), args.repeat)
        ts = best_of(lambda: run(slow), args.repeat)
        diff = float(np.max(np.abs(a - b)))
        print(f"{name:<26} {tf * 1e3:>10.2f} {ts * 1e3:>10.2f} {ts / tf:>7.1f}x {diff:>11.2e}")


if __name__ == "__main__":
    main()
