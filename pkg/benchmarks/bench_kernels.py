"""Compare the numba and pure-numpy paths of the hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs once to warm up (and compile) before timing. Results of the
two paths are checked for equality before any timing is printed.
"""

import argparse
import time

import numpy as np

from tileplan import kernels


def _best(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_divisible_pairs(rng):
    cands = rng.choice([2, 4, 8, 16, 32, 48, 64, 96, 128, 256], size=(4000, 3)).astype(np.int64)
    prev = rng.choice([1, 2, 4, 8, 16, 32], size=(400, 3)).astype(np.int64)
    a = kernels.divisible_pairs_numpy(cands, prev)
    b = kernels._divisible_pairs_jit(cands, prev)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    return (
        "divisible_pairs 4000x400",
        lambda: kernels.divisible_pairs_numpy(cands, prev),
        lambda: kernels._divisible_pairs_jit(cands, prev),
    )


def bench_simulate(rng):
    n = 200_000
    loads = rng.integers(1, 20, n).astype(np.int64)
    comps = rng.integers(1, 20, n).astype(np.int64)
    stores = rng.integers(1, 10, n // 64).astype(np.int64)
    a = kernels.simulate_numpy(loads, comps, stores, 64, False)
    b = kernels._simulate_jit(loads, comps, stores, 64, False)
    assert a == b
    return (
        "simulate 200k iterations",
        lambda: kernels.simulate_numpy(loads, comps, stores, 64, False),
        lambda: kernels._simulate_jit(loads, comps, stores, 64, False),
    )


def bench_gemm_level0(rng):
    a = rng.integers(-8, 9, (64, 64)).astype(np.int64)
    b = rng.integers(-8, 9, (64, 64)).astype(np.int64)
    c1 = np.zeros((64, 64), np.int64)
    c2 = np.zeros((64, 64), np.int64)
    kernels.gemm_level0_numpy(a, b, c1, 16, 8, 16)
    kernels._gemm_level0_jit(a, b, c2, 16, 8, 16)
    assert np.array_equal(c1, c2)
    out = np.zeros((64, 64), np.int64)
    return (
        "gemm_level0 64^3 (16x8x16)",
        lambda: kernels.gemm_level0_numpy(a, b, out, 16, 8, 16),
        lambda: kernels._gemm_level0_jit(a, b, out, 16, 8, 16),
    )


def bench_conv_level0(rng):
    t = (1, 8, 4, 4, 8, 3, 3)
    i = rng.integers(-8, 9, (1, 16, 18, 18)).astype(np.int64)
    w = rng.integers(-8, 9, (16, 16, 3, 3)).astype(np.int64)
    o1 = np.zeros((1, 16, 16, 16), np.int64)
    o2 = np.zeros((1, 16, 16, 16), np.int64)
    kernels.conv_level0_numpy(i, w, o1, t)
    kernels._conv_level0_jit(i, w, o2, *t)
    assert np.array_equal(o1, o2)
    out = np.zeros((1, 16, 16, 16), np.int64)
    return (
        "conv_level0 16x16x16x16 k3",
        lambda: kernels.conv_level0_numpy(i, w, out, t),
        lambda: kernels._conv_level0_jit(i, w, out, *t),
    )


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        print("numba unavailable (or TILEPLAN_DISABLE_NUMBA set); nothing to compare")
        return 0
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for setup in (bench_divisible_pairs, bench_simulate, bench_gemm_level0, bench_conv_level0):
        name, slow, fast = setup(rng)
        t_np = _best(slow, args.repeat)
        t_nb = _best(fast, args.repeat)
        print(f"{name:32s} {t_np * 1e3:10.2f} {t_nb * 1e3:10.2f} {t_np / t_nb:7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
