"""Compare the compiled kernels with the numpy fallback.

Usage: python benchmarks/bench_backends.py [--lengths 1024,8192,65536] [--H 64] [--N 16]
"""

import argparse
import statistics
import time

import numpy as np
from threadpoolctl import threadpool_limits

from locost import _backend
from locost.numerics import fft_rows, padded_length
from locost.ssm import init_s4d, kernel_param_grads, materialize_kernel


def timed(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times) * 1e3


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--lengths", default="1024,8192,65536")
    parser.add_argument("--H", type=int, default=64)
    parser.add_argument("--N", type=int, default=16)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    names = list(_backend.BACKENDS)
    if "compiled" not in names:
        print("compiled extension not built; only the python backend is available")
    ssm = init_s4d(args.H, args.N, seed=0)
    rng = np.random.default_rng(0)
    print(f"{'op':<12}{'L':>8}" + "".join(f"{n + ' ms':>16}" for n in names) + f"{'speedup':>10}")
    with threadpool_limits(limits=1):
        for L in (int(v) for v in args.lengths.split(",")):
            x = rng.normal(size=(args.H, padded_length(L))) + 0j
            g = rng.normal(size=(args.H, L))
            ops = {
                "fft": lambda b: fft_rows(x, backend=b),
                "kernel": lambda b: materialize_kernel(ssm, L, backend=b),
                "kernel_grad": lambda b: kernel_param_grads(ssm, g, backend=b),
            }
            for op, fn in ops.items():
                ms = [timed(lambda: fn(n), args.repeats) for n in names]
                speed = f"{ms[0] / ms[-1]:.2f}x" if len(ms) > 1 else "-"
                print(f"{op:<12}{L:>8}" + "".join(f"{m:>16.2f}" for m in ms) + f"{speed:>10}")


if __name__ == "__main__":
    main()
