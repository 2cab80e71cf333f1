"""Timing of the compiled kernels against their numpy twins, and of the
O(N) interaction reduction against the direct O(N^2) sum.

    python benchmarks/bench_kernels.py --size 1000000 --repeat 5
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from jumpfield import _accel
from jumpfield.core import TimeGrid, homogeneous_layout
from jumpfield.kernels import group_sum, hash_uniform, threefry2x32
from jumpfield.network import simulate_network
from jumpfield.presets import FhnModel


def best_of(fn, repeat: int) -> float:
    fn()  # warm-up (compilation on first call)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_kernels(size: int, repeat: int):
    rng = np.random.default_rng(0)
    k0, k1 = np.uint32(12345), np.uint32(678)
    c0 = np.arange(size, dtype=np.uint32)
    c1 = rng.integers(0, 2 ** 32, size, dtype=np.uint32)
    groups = rng.integers(0, 64, size)
    values = rng.standard_normal((size, 2))
    cases = {
        "threefry2x32": lambda b: threefry2x32(k0, k1, c0, c1, backend=b),
        "hash_uniform": lambda b: hash_uniform(k0, k1, c0, c1, backend=b),
        "group_sum": lambda b: group_sum(groups, values, 64, backend=b),
    }
    backends = ["numpy"] + (["numba"] if _accel.NUMBA_AVAILABLE else [])
    print(f"{'kernel':<14}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}   (n = {size})")
    for name, fn in cases.items():
        t = {b: best_of(lambda: fn(b), repeat) for b in backends}
        sp = t["numpy"] / t["numba"] if "numba" in t else float("nan")
        print(f"{name:<14}" + "".join(f"{t[b] * 1e3:>10.2f}ms" for b in backends) + f"{sp:>9.1f}x")
        same = all(np.array_equal(np.asarray(fn(backends[0])), np.asarray(fn(b))) for b in backends[1:])
        if not same:
            raise SystemExit(f"{name}: backends disagree")


def bench_interaction(sizes, replicas: int, repeat: int):
    grid = TimeGrid(0.5, 10, 1.0)
    model = FhnModel()
    om = model.disorder_sample([0.0])
    print(f"\n{'N':>6}{'fast':>12}{'direct':>12}{'ratio':>9}   (FHN network, {replicas} replicas, "
          f"{grid.forward_steps} steps)")
    for N in sizes:
        lay = homogeneous_layout(N)
        run = lambda m: simulate_network(lay, model, grid, om, 1, replicas=np.arange(replicas), method=m,
                                         threads=1)
        tf = best_of(lambda: run("fast"), repeat)
        td = best_of(lambda: run("direct"), repeat)
        print(f"{N:>6}{tf:>11.3f}s{td:>11.3f}s{td / tf:>8.1f}x")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=1_000_000, help="elements per kernel call")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--N", type=int, nargs="+", default=[16, 64, 256], help="network sizes")
    ap.add_argument("--replicas", type=int, default=4)
    args = ap.parse_args()
    print(f"default backend: {_accel.backend_name()}")
    bench_kernels(args.size, args.repeat)
    bench_interaction(args.N, args.replicas, max(1, args.repeat // 2))


if __name__ == "__main__":
    main()
