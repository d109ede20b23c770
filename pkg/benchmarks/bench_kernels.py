"""Compare numba and numpy kernel timings.

Run with ``python3 benchmarks/bench_kernels.py [n]``. Each kernel is called
once untimed (numba compilation) and then timed over several repeats.
"""

import sys
import timeit

import numpy as np

from landmark_dl import kernels
from landmark_dl._accel import HAVE_NUMBA


def cases(n, seed=0):
    rng = np.random.default_rng(seed)
    time = np.sort(np.round(rng.exponential(2.0, n), 2))
    status = (rng.random(n) < 0.7).astype(float)
    X = rng.standard_normal((n, 2))
    beta = np.array([0.2, -0.3])
    sT = np.unique(time[status == 1])
    sInc = rng.uniform(0.001, 0.01, sT.size)
    kT = np.unique(time[status == 0])
    kInc = rng.uniform(0.001, 0.01, kT.size)
    rS, rK = rng.lognormal(0, 0.3, n), rng.lognormal(0, 0.3, n)
    jumped = status == 1
    tau = np.full(n, 2.0)
    return {
        "cox_derivs": ((time, status, X, beta), kernels.cox_derivs_nb, kernels.cox_derivs_np),
        "surv_at": ((rS, sT, sInc, tau, True, True), kernels.surv_at_nb, kernels.surv_at_np),
        "mart_integral": ((kernels.EVENT, rS, sT, sInc, rK, kT, kInc, time, jumped, 2.0,
                           True, True, 0.01), kernels.mart_integral_nb, kernels.mart_integral_np),
    }


def main(n=2000, repeat=5):
    print(f"n = {n}, numba available: {HAVE_NUMBA}")
    print(f"{'kernel':<15}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, (args, f_nb, f_np) in cases(n).items():
        t_np = min(timeit.repeat(lambda: f_np(*args), number=1, repeat=repeat)) * 1e3
        if HAVE_NUMBA:
            f_nb(*args)
            t_nb = min(timeit.repeat(lambda: f_nb(*args), number=1, repeat=repeat)) * 1e3
            print(f"{name:<15}{t_nb:>12.3f}{t_np:>12.3f}{t_np / t_nb:>10.1f}")
        else:
            print(f"{name:<15}{'-':>12}{t_np:>12.3f}{'-':>10}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 2000)
