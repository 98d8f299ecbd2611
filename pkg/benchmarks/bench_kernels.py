"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from plan_cl import _pykernels

try:
    from plan_cl import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    m8 = rng.standard_normal((8, 8))
    m64 = rng.standard_normal((64, 64))
    g = rng.standard_normal(64)
    starts = np.zeros((8, 64))
    starts[1:] = rng.uniform(-1e-3, 1e-3, (7, 64))
    yield "gram_schmidt 64x64", lambda k: k.gram_schmidt_rows(m64, 1e-10)
    yield "jacobi_svd 8x8", lambda k: k.jacobi_svd(m8, 1e-12, 100)
    yield "jacobi_svd 64x64", lambda k: k.jacobi_svd(m64, 1e-12, 100)
    for name, p in (("l1", 1), ("l2", 2), ("linf", 0)):
        yield f"ball_ascent {name} n=64", lambda k, p=p: k.ball_ascent(g, 0.01, p, starts, 500, 1e-3)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, fn in cases(rng):
        def best(mod):
            n, _ = timeit.Timer(lambda: fn(mod)).autorange()
            return min(timeit.repeat(lambda: fn(mod), number=n, repeat=args.repeat)) / n * 1e3

        py = best(_pykernels)
        if _ckernels is None:
            print(f"{name:<24} {py:10.3f} {'n/a':>10} {'n/a':>8}")
            continue
        cy = best(_ckernels)
        print(f"{name:<24} {py:10.3f} {cy:10.3f} {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
