"""Timing comparison of the compiled and pure-numpy sampling kernels.

Run:  python3 benchmarks/bench_kernels.py [--draws N] [--repeats R]

Both backends consume the same uniform block, so the comparison is pure
arithmetic throughput.  The compiled path is warmed once before timing so
JIT compilation does not count against it.
"""

import argparse
import time

import numpy as np

from egsearch import kernels
from egsearch.gumbel import RngState


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--draws", type=int, default=1_000_000)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    k, m, tau = 5, 3, 0.1
    p = np.full(k, 1.0 / k)
    log_p = np.log(p)
    u_cat = RngState(0).uniform(args.draws * k)
    u_egs = RngState(1).uniform(args.draws * m * k)

    cases = [
        ("categorical", kernels.categorical_batch_numpy,
         getattr(kernels, "categorical_batch_numba", None),
         lambda fn: fn(log_p, u_cat)),
        ("egs hard", kernels.egs_hard_batch_numpy,
         getattr(kernels, "egs_hard_batch_numba", None),
         lambda fn: fn(log_p, u_egs, m)),
        ("gs soft", kernels.gs_soft_batch_numpy,
         getattr(kernels, "gs_soft_batch_numba", None),
         lambda fn: fn(log_p, u_cat, tau)),
    ]

    print(f"draws={args.draws} K={k} M={m} (best of {args.repeats})")
    print(f"{'kernel':<14}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, numpy_fn, numba_fn, call in cases:
        t_np = best_of(lambda: call(numpy_fn), args.repeats)
        if numba_fn is None:
            print(f"{name:<14}{t_np:>10.3f}s{'n/a':>12}{'n/a':>10}")
            continue
        call(numba_fn)  # warm the JIT outside the timed region
        t_nb = best_of(lambda: call(numba_fn), args.repeats)
        print(f"{name:<14}{t_np:>10.3f}s{t_nb:>10.3f}s{t_np / t_nb:>9.1f}x")

    # the two backends must agree before a speedup means anything
    numba_egs = getattr(kernels, "egs_hard_batch_numba", None)
    if numba_egs is not None:
        same = np.array_equal(
            kernels.egs_hard_batch_numpy(log_p, u_egs, m),
            numba_egs(log_p, u_egs, m),
        )
        print(f"hard outputs identical across backends: {same}")
    else:
        print("numba unavailable; compiled path not benchmarked")


if __name__ == "__main__":
    main()
