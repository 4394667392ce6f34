#!/usr/bin/env python3
"""Benchmark the jitted conv/pool kernels against the pure-numpy fallbacks.

Runs both implementations on the same inputs and prints per-kernel timings
plus the speedup. The numba path needs one warmup call per signature for JIT
compilation, which is excluded from the timings.

    python3 benchmarks/bench_kernels.py [--batch 32] [--size 32] [--iters 20]
"""

import argparse
import time

import numpy as np

from preindex import kernels as K
from preindex._accel import NUMBA_ENABLED
from preindex.tensor_core import make_rng


def timeit(fn, *args, iters):
    fn(*args)  # warmup (JIT compile on the numba path)
    t0 = time.perf_counter()
    for _ in range(iters):
        fn(*args)
    return (time.perf_counter() - t0) / iters


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--size", type=int, default=32)
    parser.add_argument("--iters", type=int, default=20)
    args = parser.parse_args()

    rng = make_rng(0)
    x = rng.standard_normal((args.batch, args.size, args.size, 8))
    w = rng.standard_normal((3, 3, 8, 16))
    b = rng.standard_normal(16)
    out = K._conv2d_forward_np(x, w, b, 1)
    dy = rng.standard_normal(out.shape)
    pooled, arg = K._maxpool_forward_np(x, 2, 2)
    dpool = rng.standard_normal(pooled.shape)

    cases = [
        ("conv2d_forward", K._conv2d_forward_nb, K._conv2d_forward_np, (x, w, b, 1)),
        ("conv2d_backward", K._conv2d_backward_nb, K._conv2d_backward_np, (x, w, dy, 1)),
        ("maxpool_forward", K._maxpool_forward_nb, K._maxpool_forward_np, (x, 2, 2)),
        ("maxpool_backward", K._maxpool_backward_nb, K._maxpool_backward_np,
         (dpool, arg, args.size, args.size)),
    ]

    print(f"batch={args.batch} size={args.size}x{args.size} iters={args.iters} "
          f"numba={'on' if NUMBA_ENABLED else 'OFF (PREINDEX_NO_NUMBA)'}")
    print(f"{'kernel':<18}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, fn_nb, fn_np, fargs in cases:
        t_np = timeit(fn_np, *fargs, iters=args.iters)
        if NUMBA_ENABLED:
            t_nb = timeit(fn_nb, *fargs, iters=args.iters)
            print(f"{name:<18}{t_nb * 1e3:>10.3f}{t_np * 1e3:>10.3f}{t_np / t_nb:>8.1f}x")
        else:
            print(f"{name:<18}{'-':>10}{t_np * 1e3:>10.3f}{'-':>9}")


if __name__ == "__main__":
    main()
