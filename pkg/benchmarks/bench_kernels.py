"""Benchmark the numba kernels against the pure-numpy fallbacks.

Run:  python3 benchmarks/bench_kernels.py
The same selection is available globally through BLOCHWAVE_NUMBA=0.
"""

import time

import numpy as np

from blochwave import _kernels as K


def timeit(fn, *args, repeat=5):
    fn(*args)                      # warm up (includes jit compilation)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    n_f = 96
    xis = np.linspace(-np.pi, np.pi, 64)
    modes = np.arange(-n_f, n_f + 1)
    span = 2 * n_f
    conv = rng.normal(size=2 * span + 1) + 1j * rng.normal(size=2 * span + 1)
    convp = rng.normal(size=(2, 2, 2 * span + 1)) \
        + 1j * rng.normal(size=(2, 2, 2 * span + 1))
    diff = np.array([[1.0, 0.2], [0.2, 2.0]])
    w1 = rng.normal(size=193) + 1j * rng.normal(size=193)
    w2 = rng.normal(size=289) + 1j * rng.normal(size=289)
    coeff = rng.normal(size=400) + 1j * rng.normal(size=400)
    thetas = rng.normal(size=400) * 30
    pts = rng.normal(size=12800) * 100

    cases = [
        ("assemble_kdv (64 fibers, N_F=96)",
         lambda: K.assemble_kdv_fibers(xis, modes, conv, span, 0.3, 0.7)),
        ("assemble_parabolic (64 fibers, d=2)",
         lambda: K.assemble_parabolic_fibers(xis, modes, convp, span, 0.3, 0.7, diff)),
        ("match_eigenvalues (193 vs 289)",
         lambda: K.match_eigenvalues(w1, w2)),
        ("nufft_eval (400 modes, 12800 pts)",
         lambda: K.nufft_eval(coeff, thetas, pts)),
    ]
    print(f"{'kernel':42s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name, fn in cases:
        K.set_backend("numpy")
        t_np = timeit(lambda: fn())
        K.set_backend("numba")
        t_nb = timeit(lambda: fn())
        print(f"{name:42s} {t_np*1e3:9.2f}ms {t_nb*1e3:9.2f}ms "
              f"{t_np/max(t_nb,1e-12):7.1f}x")


if __name__ == "__main__":
    main()
