"""Compare the compiled kernels with the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Reports the best-of-N wall time per call for each kernel on both backends,
the speed-up, and the largest absolute difference between their outputs.
A final section times a full automatic ARIMA fit and a batch of life tables
with each backend swapped in.
"""

import argparse
import timeit

import numpy as np

from mlfdm import _pykernels, kernels
from mlfdm.lifetable import life_expectancy
from mlfdm.ts.arima import _state_matrices, _stationary_cov, auto_arima

try:
    from mlfdm import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _kalman_case(rng, n=200):
    phi, rvec, T = _state_matrices(np.array([0.6, -0.2, 0.1]), np.array([0.3]))
    P0 = np.ascontiguousarray(_stationary_cov(T, rvec))
    x = rng.standard_normal(n)

    def call(mod):
        r = len(phi)
        resid, a, P = np.empty(n), np.empty(r), np.empty((r, r))
        out = mod.arma_kalman(x, phi, rvec, P0, resid, a, P)
        return np.r_[out, resid, a, P.ravel()]

    return call


def _life_case(rng, N=300, p=96):
    ages = np.arange(p, dtype=float)
    m = np.exp(-9.0 + 0.09 * ages + 0.1 * rng.standard_normal((N, p)))
    m = np.ascontiguousarray(m)
    widths = np.diff(ages)
    return lambda mod: np.asarray(mod.life_expectancy_batch(m, widths, True))


def _frac_case(rng, n=400):
    x = rng.standard_normal(n)
    return lambda mod: np.r_[np.asarray(mod.frac_diff(x, 0.3)),
                             np.asarray(mod.frac_integrate(x, 0.3))]


def best_time(fn, repeat):
    t = timeit.Timer(fn)
    number, _ = t.autorange()
    return min(t.repeat(repeat, number)) / number


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    cases = {"arma_kalman (n=200, r=3)": _kalman_case(rng),
             "life_expectancy_batch (300 x 96)": _life_case(rng),
             "frac_diff + frac_integrate (n=400)": _frac_case(rng)}
    print(f"{'kernel':38s} {'python':>11s} {'cython':>11s} {'speed-up':>9s} {'max diff':>10s}")
    for name, call in cases.items():
        tp = best_time(lambda: call(_pykernels), repeat)
        if _ckernels is None:
            print(f"{name:38s} {tp * 1e6:9.1f}us {'n/a':>11s}")
            continue
        tc = best_time(lambda: call(_ckernels), repeat)
        diff = np.max(np.abs(call(_pykernels) - call(_ckernels)))
        print(f"{name:38s} {tp * 1e6:9.1f}us {tc * 1e6:9.1f}us {tp / tc:8.1f}x {diff:10.2e}")


def _swap(mod):
    for name in ("arma_kalman", "life_expectancy_batch", "frac_diff", "frac_integrate"):
        setattr(kernels, name, getattr(mod, name))


def bench_end_to_end(repeat):
    rng = np.random.default_rng(1)
    e = rng.standard_normal(120)
    x = np.zeros(120)
    for t in range(1, 120):
        x[t] = 0.6 * x[t - 1] + e[t]
    rates = np.exp(-9.0 + 0.09 * np.arange(96) + 0.05 * rng.standard_normal((200, 30, 96)))
    jobs = {"auto_arima (n=120)": lambda: auto_arima(x),
            "life_expectancy (200 x 30 paths)": lambda: life_expectancy(rates)}
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print()
    print(f"{'task':38s} " + " ".join(f"{b:>11s}" for b, _ in backends))
    saved = {n: getattr(kernels, n) for n in ("arma_kalman", "life_expectancy_batch",
                                               "frac_diff", "frac_integrate")}
    try:
        for name, job in jobs.items():
            times = []
            for _, mod in backends:
                _swap(mod)
                times.append(min(timeit.repeat(job, number=1, repeat=repeat)))
            print(f"{name:38s} " + " ".join(f"{t * 1e3:9.1f}ms" for t in times))
    finally:
        for n, f in saved.items():
            setattr(kernels, n, f)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    bench_kernels(args.repeat)
    bench_end_to_end(max(1, args.repeat // 2))


if __name__ == "__main__":
    main()
