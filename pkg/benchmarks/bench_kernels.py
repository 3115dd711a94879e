"""Time the compiled kernels against their numpy twins.

Run with ``python benchmarks/bench_kernels.py``. Compilation happens once
before timing starts, so the numbers reflect steady-state throughput.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from streamws import _kernels as kern


def posterior_case(n, m, k, seed=0):
    rng = np.random.default_rng(seed)
    return (
        rng.integers(0, k + 1, (n, m)).astype(np.int64),
        np.log(rng.uniform(0.3, 0.9, (k, m))),
        np.log(rng.uniform(0.02, 0.3, (k, m))),
        rng.uniform(0.3, 1.0, m),
        np.log(np.full(k, 1.0 / k)),
    )


def fit_case(m, seed=0):
    rng = np.random.default_rng(seed)
    rows, cols = np.triu_indices(m, 1)
    return (rng.normal(size=m), rows.astype(np.int64), cols.astype(np.int64),
            rng.normal(size=rows.size))


def bench(label, fast, slow, args, repeat):
    fast(*args)  # trigger compilation outside the timed region
    t_fast = min(timeit.repeat(lambda: fast(*args), number=1, repeat=repeat))
    t_slow = min(timeit.repeat(lambda: slow(*args), number=1, repeat=repeat))
    print(f"{label:<34} numba {t_fast * 1e3:9.3f} ms   numpy {t_slow * 1e3:9.3f} ms"
          f"   speedup {t_slow / t_fast:6.1f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=7)
    args = parser.parse_args()
    if not kern.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    for n, m, k in [(500, 10, 2), (10_000, 20, 4), (100_000, 50, 3)]:
        bench(f"posterior n={n} m={m} k={k}", kern.posterior_scores_numba,
              kern.posterior_scores_numpy, posterior_case(n, m, k), args.repeat)
    for m in (10, 50, 200):
        case = fit_case(m)
        bench(f"normal equations m={m}", kern.masked_normal_eqs_numba,
              kern.masked_normal_eqs_numpy, case, args.repeat)
        bench(f"objective m={m}", kern.masked_objective_numba,
              kern.masked_objective_numpy, case, args.repeat)


if __name__ == "__main__":
    main()
