"""Compiled vs numpy kernels: polynomial products and lasso sweeps.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from slafnet import kernels
from slafnet.kernels import fallback
from slafnet.polybasis import Polynomial, enumerate_basis, poly_mul

try:
    from slafnet.kernels import _ckernels as compiled
except ImportError:
    compiled = None


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def _random_operands(rng, n):
    # unrelated keys, so almost every product term is new: worst case for hashing
    ka = np.sort(rng.choice(1 << 24, size=n, replace=False)).astype(np.int64)
    kb = np.sort(rng.choice(1 << 24, size=n, replace=False)).astype(np.int64)
    return ka, rng.normal(size=n), kb, rng.normal(size=n)


def _lasso_operands(rng, m, p):
    Z = np.asfortranarray(rng.normal(size=(m, p)))
    Z = (Z - Z.mean(axis=0)) / Z.std(axis=0)
    y = Z[:, : p // 10] @ rng.normal(size=p // 10)
    return Z, y, (Z * Z).sum(axis=0) / m, np.ones(p, np.uint8)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.BACKEND}")
    impls = [("python", fallback)] + ([("compiled", compiled)] if compiled else [])

    for n in (200, 1000):
        ops = _random_operands(rng, n)
        row = [f"mul_packed random {n}x{n} terms:"]
        for name, mod in impls:
            row.append(f"{name} {1e3 * _best(lambda: mod.mul_packed(*ops), args.repeat):8.2f} ms")
        print("  ".join(row))

    # dense polynomials, the shape flattening produces: products collide heavily
    for n, k in ((2, 49), (3, 12), (13, 4)):
        basis = enumerate_basis(n, k)
        p = Polynomial(n, {b.exponents: float(c) for b, c in zip(basis, rng.normal(size=len(basis)))})
        row = [f"poly_mul dense n={n} k={k} ({len(basis)} terms squared):"]
        for name, mod in impls:
            saved = kernels.mul_packed
            kernels.mul_packed = mod.mul_packed
            try:
                row.append(f"{name} {1e3 * _best(lambda: poly_mul(p, p), args.repeat):8.2f} ms")
            finally:
                kernels.mul_packed = saved
        print("  ".join(row))

    for m, p in ((400, 105), (2000, 500)):
        Z, y, col_sq, mask = _lasso_operands(rng, m, p)
        row = [f"cd_sweep {m}x{p}, 10 sweeps:"]
        for name, mod in impls:
            def run():
                r, w = y.copy(), np.zeros(p)
                for _ in range(10):
                    mod.cd_sweep(Z, r, w, col_sq, 1e-3, mask)
            row.append(f"{name} {1e3 * _best(run, args.repeat):8.2f} ms")
        print("  ".join(row))


if __name__ == "__main__":
    main()
