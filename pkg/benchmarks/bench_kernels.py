"""Time the numba and numpy kernel backends and check that they agree.

Usage: python3 benchmarks/bench_kernels.py [--repeat 3]

Numba timings exclude compilation (one warm-up call per kernel).
"""

import argparse
import time

import numpy as np

from piic import _accel, kernels


def _problem(seed=0, n=30, p=9):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    theta = np.repeat([3.0, 2.0, 1.0], p // 3)
    y = X @ theta + rng.standard_normal(n)
    return rng, X, y, theta


def case_rwm(seed=0):
    rng, X, y, theta = _problem(seed)
    n, p = X.shape
    T = 20_000
    z = rng.standard_normal((T, p))
    logu = np.log(rng.random((T, p)))
    args = (X, y, np.ones(n), np.ones(n), kernels.GAUSSIAN, 1.0, kernels.LAPLACE_PRIOR,
            np.full(p, 0.5), 1.0, theta, np.full(p, 0.3), z, logu, 4_000, 2)
    return lambda: kernels.rwm(*args)[0]


def case_wlasso(seed=0):
    rng, X, y, _ = _problem(seed, n=200, p=60)
    lam = np.full(X.shape[1], 5.0)
    return lambda: kernels.wlasso_cd(X, y, np.ones(X.shape[0]), lam)[0]


def case_predictive(seed=0):
    rng, X, y, theta = _problem(seed)
    S, M = 4_000, 5_000
    Theta = theta + 0.1 * rng.standard_normal((S, theta.size))
    Xn = rng.standard_normal((M, theta.size))
    yn = Xn @ theta + rng.standard_normal(M)
    lconst = np.full(M, -0.5 * np.log(2 * np.pi))
    return lambda: kernels.predictive_logmeanexp(Theta, np.zeros(S), Xn, yn, np.ones(M),
                                                 lconst, kernels.GAUSSIAN, 1.0)


CASES = {"rwm": case_rwm, "wlasso_cd": case_wlasso, "predictive_logmeanexp": case_predictive}


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def run(repeat=3):
    rows = []
    for name, make in CASES.items():
        fn = make()
        results = {}
        for be in ("numpy", "numba"):
            _accel.set_backend(be)
            if be == "numba":
                fn()  # compile
            results[be] = _time(fn, repeat)
        diff = float(np.max(np.abs(results["numba"][1] - results["numpy"][1])))
        rows.append((name, results["numpy"][0], results["numba"][0], diff))
    _accel.set_backend("numba")
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed")
    print(f"{'kernel':24s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, t_np, t_nb, diff in run(args.repeat):
        print(f"{name:24s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
