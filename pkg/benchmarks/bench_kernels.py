"""Benchmark the numba kernel lane against the pure-numpy fallback.

Run: python benchmarks/bench_kernels.py [--steps N]
The same seeds drive both lanes, so the outputs agree up to floating-point
association; timings include noise generation but not JIT compilation
(warmed up first).
"""
import argparse
import time

import numpy as np

from diffexc.core import RngSeed, TimeGrid
from diffexc.drift import DriftSpec, init_params
from diffexc.sde import euler_maruyama, sample_arrivals


def _time(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=2_000_000)
    args = ap.parse_args()
    n = args.steps

    ou = DriftSpec("ou")
    zero = DriftSpec("linear")
    mlp = DriftSpec("mlp", width=16, depth=6)
    mlp_p = init_params(mlp, RngSeed(1))

    cases = [
        ("euler OU path", lambda be: euler_maruyama(
            ou, [], 0.5, TimeGrid(0.0, 1e-3, n), 1.0, RngSeed(2), backend=be)),
        ("euler MLP path", lambda be: euler_maruyama(
            mlp, mlp_p, 0.5, TimeGrid(0.0, 1e-3, n // 4), 1.0, RngSeed(3),
            backend=be)),
        ("arrivals driftless delta=0.1", lambda be: sample_arrivals(
            zero, [0.0], 0.0, TimeGrid(0.0, 1e-3, n), 1.0, 0.1, RngSeed(4),
            backend=be)),
        ("arrivals OU delta=0.1", lambda be: sample_arrivals(
            ou, [], 0.0, TimeGrid(0.0, 1e-3, n // 4), 1.0, 0.1, RngSeed(5),
            backend=be)),
    ]

    print(f"{'kernel':<32} {'numba':>10} {'numpy':>10} {'speedup':>9}")
    for name, runner in cases:
        runner("numba")  # warm the JIT
        t_nb = _time(lambda: runner("numba"))
        t_np = _time(lambda: runner("numpy"), repeat=1)
        print(f"{name:<32} {t_nb:>9.3f}s {t_np:>9.3f}s {t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
