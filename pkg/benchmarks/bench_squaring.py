"""Benchmark the sequential-squaring kernel: compiled extension vs pure Python.

The squaring chain is the hot path of every puzzle solve, so the package
ships a Cython kernel with a word-sized fast path and falls back to the pure
loop when the extension is unavailable.  This script measures both on the
same host and prints the speedup per modulus size.

Usage: python3 benchmarks/bench_squaring.py [--steps N] [--bits 64,256,512]
"""

import argparse
import time

from ringveil import crypto
from ringveil._kernel import BACKEND, pure

try:
    from ringveil._kernel import _seqsquare as compiled
except ImportError:
    compiled = None


def rate(chain, modulus, steps, repeats=5):
    """Best-of-N squarings per second for one kernel."""
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        chain(2, modulus, steps)
        best = min(best, time.perf_counter() - start)
    return steps / best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=200_000)
    parser.add_argument(
        "--bits",
        default="64,256,512,1024",
        help="comma-separated modulus sizes",
    )
    args = parser.parse_args()
    sizes = [int(b) for b in args.bits.split(",")]

    print(f"active backend: {BACKEND}")
    header = f"{'bits':>6} {'pure (sq/s)':>14} {'compiled (sq/s)':>16} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for bits in sizes:
        params = crypto.gen_params(bits, rng_seed=bits)
        steps = args.steps if bits <= 128 else max(args.steps // 10, 1000)
        pure_rate = rate(pure.square_chain, params.n, steps)
        if compiled is None:
            print(f"{bits:>6} {pure_rate:>14,.0f} {'unavailable':>16} {'-':>8}")
            continue
        fast_rate = rate(compiled.square_chain, params.n, steps)
        print(
            f"{bits:>6} {pure_rate:>14,.0f} {fast_rate:>16,.0f}"
            f" {fast_rate / pure_rate:>7.1f}x"
        )


if __name__ == "__main__":
    main()
