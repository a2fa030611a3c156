"""Benchmark the hot kernels and a full network pass on both backends.

Usage: python benchmarks/bench_kernels.py [--repeats N]

The numba backend JIT-compiles on first call (cached across runs); the
warmup pass keeps compilation out of the timings.
"""

import argparse
import time

import numpy as np

from siamnet import backend, network
from siamnet.layers import conv2d, conv2d_backward, maxpool2, maxpool2_backward


def timeit(fn, repeats):
    fn()  # warmup / JIT
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_backend(name, repeats):
    backend.set_backend(name)
    rng = np.random.default_rng(0)
    rows = {}

    # C1-shaped convolution: batch of part crops
    x = rng.normal(size=(16, 3, 48, 48))
    f = rng.normal(size=(64, 3, 7, 7))
    b = rng.normal(size=64)
    up = rng.normal(size=(16, 64, 48, 48))
    rows["conv2d 7x7 fwd"] = timeit(lambda: conv2d(x, f, b), repeats)
    rows["conv2d 7x7 bwd"] = timeit(lambda: conv2d_backward(x, f, up), repeats)

    # C3-shaped convolution
    x3 = rng.normal(size=(16, 64, 24, 24))
    f3 = rng.normal(size=(64, 64, 5, 5))
    b3 = rng.normal(size=64)
    up3 = rng.normal(size=(16, 64, 24, 24))
    rows["conv2d 5x5 fwd"] = timeit(lambda: conv2d(x3, f3, b3), repeats)
    rows["conv2d 5x5 bwd"] = timeit(lambda: conv2d_backward(x3, f3, up3), repeats)

    xp = rng.normal(size=(16, 64, 48, 48))
    rows["maxpool2 fwd"] = timeit(lambda: maxpool2(xp), repeats)
    _, idx = maxpool2(xp)
    gp = rng.normal(size=(16, 64, 24, 24))
    rows["maxpool2 bwd"] = timeit(lambda: maxpool2_backward(idx, gp), repeats)

    # full paper-geometry network, forward + backward
    params = network.init_network("general", 0)
    parts = rng.normal(size=(8, 3, 3, 48, 48))

    def full_pass():
        feats, cache = network.forward_batch(params, parts)
        network.backward_batch(params, cache, np.ones_like(feats))

    rows["full net fwd+bwd (batch 8)"] = timeit(full_pass, max(1, repeats // 3))
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    results = {}
    for name in ("numpy", "numba"):
        try:
            results[name] = bench_backend(name, args.repeats)
        except ImportError:
            print(f"{name} backend unavailable, skipping")

    kernels = list(next(iter(results.values())))
    width = max(map(len, kernels))
    header = f"{'kernel':<{width}}  " + "  ".join(f"{n:>10}" for n in results)
    if len(results) == 2:
        header += f"  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for k in kernels:
        line = f"{k:<{width}}  " + "  ".join(
            f"{results[n][k] * 1e3:8.2f}ms" for n in results)
        if len(results) == 2:
            line += f"  {results['numpy'][k] / results['numba'][k]:7.2f}x"
        print(line)


if __name__ == "__main__":
    main()
