"""Timing comparison of the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--reps 20]

The active backend is whatever the process selected at import time (numba
unless NOISYREC_DISABLE_NUMBA=1); the fallback implementations are always
importable, so both paths are timed in one process.
"""

import argparse
import time

import numpy as np

from noisyrec import _kernels
from noisyrec.data import make_rng


def timeit(fn, args, reps):
    fn(*args)  # warmup (triggers JIT on the compiled path)
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_factor(reps, n=2000, m=2000, d=16, batch=65536):
    rng = make_rng(0)
    u = rng.integers(0, n, size=batch)
    i = rng.integers(0, m, size=batch)
    ue = rng.normal(size=(n, d))
    ie = rng.normal(size=(m, d))
    ub = rng.normal(size=n)
    ib = rng.normal(size=m)
    coef = rng.normal(size=batch)
    rows = [
        ("factor_scores", _kernels.factor_scores, _kernels._factor_scores_np,
         (u, i, ue, ie, ub, ib, 0.1)),
        ("factor_backward", _kernels.factor_backward,
         _kernels._factor_backward_np, (u, i, ue, ie, coef)),
    ]
    return [(name, timeit(active, args, reps), timeit(ref, args, reps))
            for name, active, ref, args in rows]


def bench_mc(reps, n_cells=2500, n_reps=20000):
    rng = make_rng(1)
    p_true = rng.uniform(0.2, 0.9, size=n_cells)
    p_hat = rng.uniform(0.2, 0.9, size=n_cells)
    e_bar = rng.normal(0.3, 0.1, size=n_cells)
    s1 = rng.normal(0.5, 0.2, size=n_cells)
    s0 = rng.normal(0.2, 0.2, size=n_cells)
    q1 = rng.uniform(0.1, 0.9, size=n_cells)
    args = (n_reps, 7, p_true, p_hat, e_bar, s1, s0, q1)
    return [("mc_dr_estimates", timeit(_kernels.mc_dr_estimates, args, reps),
             timeit(_kernels._mc_dr_estimates_np, args, reps))]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=20,
                    help="timing repetitions (best-of)")
    opts = ap.parse_args()
    print(f"active backend: {_kernels.ACTIVE_BACKEND}")
    print(f"{'kernel':<18} {'active (ms)':>12} {'numpy (ms)':>12} "
          f"{'speedup':>8}")
    for name, t_active, t_np in bench_factor(opts.reps) + bench_mc(opts.reps):
        print(f"{name:<18} {t_active * 1e3:>12.3f} {t_np * 1e3:>12.3f} "
              f"{t_np / t_active:>7.1f}x")


if __name__ == "__main__":
    main()
