"""Compare the numba and numpy kernel backends, and time sampler iterations.

    python3 benchmarks/bench_kernels.py [--sizes 128 512 1024 4096] [--reps 200]
    python3 benchmarks/bench_kernels.py --sampler --n 162 --T 365 --iters 20

The numba backend is imported directly here, so the SPPM_DISABLE_NUMBA flag
only affects the sampler timing.
"""
import argparse
import time

import numpy as np

from sppm._kernels import _numpy

try:
    from sppm._kernels import _numba
except ImportError:  # pragma: no cover
    _numba = None


def _median_time(fn, reps):
    fn()  # warm-up (and JIT compile)
    ts = np.empty(reps)
    for r in range(reps):
        t0 = time.perf_counter()
        fn()
        ts[r] = time.perf_counter() - t0
    return float(np.median(ts))


def kernel_calls(mod, T, rng):
    phi, tau2, sigma2 = 0.7, 0.8, 0.3
    w = rng.standard_normal(T)
    V = rng.standard_normal((T, 5))
    z = rng.standard_normal(T)
    phis = rng.uniform(0.1, 0.9, 8)
    tau2s = rng.uniform(0.2, 2.0, 8)
    return {
        "quad_form": lambda: mod.quad_form(w, phi, tau2),
        "log_det_precision": lambda: mod.log_det_precision(T, phi, tau2),
        "loglik_many(8)": lambda: mod.loglik_many(w, phis, tau2s),
        "marginal_solve(5)": lambda: mod.marginal_solve(V, sigma2, phi, tau2),
        "sample_w": lambda: mod.sample_w(w, sigma2, phi, tau2, z),
    }


def bench_kernels(sizes, reps):
    rng = np.random.default_rng(0)
    backends = [("numpy", _numpy)] + ([("numba", _numba)] if _numba is not None else [])
    print(f"{'kernel':<20}{'T':>6}" + "".join(f"{name + ' us':>14}" for name, _ in backends)
          + f"{'speedup':>10}")
    for T in sizes:
        rows = {}
        for name, mod in backends:
            for kname, fn in kernel_calls(mod, T, rng).items():
                rows.setdefault(kname, []).append(_median_time(fn, reps) * 1e6)
        for kname, ts in rows.items():
            sp = ts[0] / ts[1] if len(ts) > 1 else float("nan")
            print(f"{kname:<20}{T:>6}" + "".join(f"{t:>14.2f}" for t in ts) + f"{sp:>10.1f}")


def bench_sampler(n, T, iters, mode):
    from sppm import ChainConfig, Hyperparams, SyntheticSpec, generate_synthetic
    from sppm._kernels import BACKEND_NAME
    from sppm.cli import mode_hyperparams
    from sppm.sampler import Sampler
    from sppm.model import build_seasonal_design

    data, _, _ = generate_synthetic(SyntheticSpec(n=n, T=T, seed=1))
    hyper = mode_hyperparams(mode, data.coords, Hyperparams())
    sampler = Sampler(data.y, build_seasonal_design(data.time_index), data.coords, hyper,
                      ChainConfig(n_iter=iters + 1, burn_in=iters))
    sampler.step()  # compile
    t0 = time.perf_counter()
    for _ in range(iters):
        sampler.step()
    dt = (time.perf_counter() - t0) / iters
    print(f"sampler {mode} n={n} T={T} backend={BACKEND_NAME}: {dt:.4f} s/iteration "
          f"(K={sampler.state.K})")
    return dt


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--sizes", type=int, nargs="+", default=[128, 512, 1024, 4096])
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--sampler", action="store_true")
    p.add_argument("--n", type=int, default=162)
    p.add_argument("--T", type=int, default=365)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--mode", default="sppm-g3")
    a = p.parse_args()
    if a.sampler:
        bench_sampler(a.n, a.T, a.iters, a.mode)
    else:
        bench_kernels(a.sizes, a.reps)


if __name__ == "__main__":
    main()
