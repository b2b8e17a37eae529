"""Time the compiled kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

Each line reports the best-of-``repeat`` wall time per call for both
backends and whether their outputs agree.
"""
import argparse
import timeit

import numpy as np

from nrf import _kernels_py

try:
    from nrf import _kernels
except ImportError:
    _kernels = None


def _cases(rng):
    n = 5000
    xs = np.sort(rng.uniform(size=n))
    ys = rng.normal(size=n)
    yield "split_gains n=5000", lambda k: k.split_gains(xs, ys), True

    from nrf import cart, data
    ds = data.synth_sine(4000, 4, 0.1, 0)
    tree = cart.grow_tree(np.arange(ds.n), ds, cart.MaxDepth(8), seed=0)
    X = ds.features
    yield "route 4000x4 depth 8", lambda k: k.route(X, tree.feature, tree.threshold, tree.left,
                                                     tree.right), True

    p = 1_000_000
    g = rng.normal(size=p)

    state = {}

    # state persists across timed calls so allocation stays out of the timing
    def adam(k):
        theta, m, v = state.setdefault(("a", k), (np.zeros(p), np.zeros(p), np.zeros(p)))
        k.adam_update(theta, g, m, v, 0.01, 0.9, 0.999, 1e-8, 31.6)
        return theta
    yield "adam_update p=1e6", adam, True

    idx = np.sort(rng.choice(p, size=20000, replace=False)).astype(np.intp)

    def adam_idx(k):
        theta, m, v = state.setdefault(("i", k), (np.zeros(p), np.zeros(p), np.zeros(p)))
        k.adam_update_indexed(theta, g, m, v, idx, 0.01, 0.9, 0.999, 1e-8, 31.6)
        return theta
    yield "adam_update_indexed 2e4 of 1e6", adam_idx, True

    H, K, B, nnz = 1800, 1900, 32, 11000
    rows = rng.integers(0, H, nnz).astype(np.intp)
    cols = rng.integers(0, K, nnz).astype(np.intp)
    keep = np.unique(rows * K + cols)
    rows, cols = (keep // K).astype(np.intp), (keep % K).astype(np.intp)
    vals = rng.normal(size=rows.size)
    A = rng.normal(size=(B, H))
    D = rng.normal(size=(B, K))

    def mm(k):
        out = np.zeros((B, K))
        k.masked_matmul(A, rows, cols, vals, K, out)
        return out
    yield f"masked_matmul 32x{H} @ {H}x{K} ({rows.size} nnz)", mm, False

    def mmt(k):
        out = np.zeros((B, H))
        k.masked_matmul_t(D, rows, cols, vals, H, out)
        return out
    yield "masked_matmul_t", mmt, False

    def outer(k):
        out = np.zeros(rows.size)
        k.masked_outer(A, D, rows, cols, out)
        return out
    yield "masked_outer", outer, False


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':44s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}  agree")
    for name, fn, exact in _cases(rng):
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if _kernels is None:
            print(f"{name:44s} {t_py:10.3f}")
            continue
        t_cy = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        a, b = fn(_kernels_py), fn(_kernels)
        agree = np.array_equal(a, b) if exact else np.allclose(a, b, rtol=1e-12, atol=1e-12)
        label = ("bitwise" if exact else "allclose") if agree else "NO"
        print(f"{name:44s} {t_py:10.3f} {t_cy:10.3f} {t_py / t_cy:8.1f}x  {label}")


if __name__ == "__main__":
    main()
