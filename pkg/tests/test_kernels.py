"""The compiled kernels and the numpy fallback must agree."""
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from nrf import _kernels_py, kernels

try:
    from nrf import _kernels
except ImportError:  # pragma: no cover
    _kernels = None

needs_ext = pytest.mark.skipif(_kernels is None, reason="compiled extension not built")
floats = st.floats(-1e3, 1e3, allow_nan=False)


def brute_gains(xs, ys):
    n = xs.size
    out = np.full(n, -np.inf)
    sse = lambda v: float(np.sum((v - v.mean()) ** 2)) if v.size else 0.0
    for i in range(1, n):
        if xs[i] > xs[i - 1]:
            out[i] = (sse(ys) - sse(ys[:i]) - sse(ys[i:])) / n
    return out


@given(arrays(np.float64, st.integers(1, 40), elements=st.integers(0, 6).map(float)),
       st.data())
def test_split_gains_match_direct_sse(xs, data):
    xs = np.sort(xs)
    ys = np.asarray(data.draw(arrays(np.float64, xs.size, elements=floats)))
    ys = ys - ys.mean()
    g = _kernels_py.split_gains(xs, ys)
    ref = brute_gains(xs, ys)
    finite = np.isfinite(ref)
    assert np.array_equal(finite, np.isfinite(g))
    scale = max(1.0, float(np.sum(ys * ys)))
    assert np.allclose(g[finite], ref[finite], rtol=0, atol=1e-9 * scale)


@needs_ext
@given(arrays(np.float64, st.integers(1, 40), elements=st.integers(0, 6).map(float)), st.data())
def test_split_gains_backends_bitwise(xs, data):
    xs = np.sort(xs)
    ys = np.asarray(data.draw(arrays(np.float64, xs.size, elements=floats)))
    a = _kernels_py.split_gains(xs, ys)
    b = _kernels.split_gains(xs, ys)
    assert np.array_equal(a, b)


@needs_ext
@given(st.integers(0, 10_000))
def test_route_backends_agree(seed):
    from conftest import random_tree
    rng = np.random.default_rng(seed)
    tree, X, _ = random_tree(rng)
    Q = np.ascontiguousarray(np.vstack([X, rng.uniform(size=(20, X.shape[1]))]))
    args = (Q, tree.feature, tree.threshold, tree.left, tree.right)
    assert np.array_equal(_kernels_py.route(*args), _kernels.route(*args))


def _adam_args(seed, p=50):
    rng = np.random.default_rng(seed)
    return [rng.normal(size=p), rng.normal(size=p), rng.normal(size=p) * 0.1,
            rng.uniform(size=p) * 0.1]


@needs_ext
@given(st.integers(0, 10_000), st.integers(1, 50))
def test_adam_backends_bitwise(seed, t):
    a = _adam_args(seed)
    b = [v.copy() for v in a]
    step, isb2 = 0.001 / (1 - 0.9 ** t), 1 / np.sqrt(1 - 0.999 ** t)
    _kernels_py.adam_update(*a, step, 0.9, 0.999, 1e-8, isb2)
    _kernels.adam_update(*b, step, 0.9, 0.999, 1e-8, isb2)
    for u, v in zip(a, b):
        assert np.array_equal(u, v)


@needs_ext
@given(st.integers(0, 10_000))
def test_adam_indexed_backends_bitwise(seed):
    a = _adam_args(seed)
    b = [v.copy() for v in a]
    idx = np.sort(np.random.default_rng(seed).choice(50, 17, replace=False)).astype(np.intp)
    _kernels_py.adam_update_indexed(*a, idx, 0.01, 0.9, 0.999, 1e-8, 3.0)
    _kernels.adam_update_indexed(*b, idx, 0.01, 0.9, 0.999, 1e-8, 3.0)
    for u, v in zip(a, b):
        assert np.array_equal(u, v)


def test_adam_indexed_leaves_other_entries():
    a = _adam_args(0)
    before = [v.copy() for v in a]
    idx = np.array([3, 7], dtype=np.intp)
    kernels.adam_update_indexed(*a, idx, 0.01, 0.9, 0.999, 1e-8, 3.0)
    other = np.setdiff1d(np.arange(50), idx)
    for u, v in zip(a[:1] + a[2:], before[:1] + before[2:]):
        assert np.array_equal(u[other], v[other])
        assert not np.array_equal(u[idx], v[idx])


@pytest.mark.parametrize("impl", [m for m in (_kernels_py, _kernels) if m is not None])
def test_masked_products_match_dense(impl, rng):
    H, K, B = 7, 9, 5
    mask = rng.uniform(size=(H, K)) < 0.3
    rows, cols = (np.ascontiguousarray(i, dtype=np.intp) for i in np.nonzero(mask))
    W = np.where(mask, rng.normal(size=(H, K)), 0.0)
    vals = W[rows, cols]
    A, D = rng.normal(size=(B, H)), rng.normal(size=(B, K))
    z = np.ones((B, K))
    impl.masked_matmul(A, rows, cols, vals, K, z)
    assert np.allclose(z, 1 + A @ W, rtol=1e-13, atol=1e-13)
    dl = np.zeros((B, H))
    impl.masked_matmul_t(D, rows, cols, vals, H, dl)
    assert np.allclose(dl, D @ W.T, rtol=1e-13, atol=1e-13)
    g = np.zeros(rows.size)
    impl.masked_outer(A, D, rows, cols, g)
    assert np.allclose(g, (A.T @ D)[rows, cols], rtol=1e-13, atol=1e-13)


def test_backend_flag_is_reported():
    assert kernels.BACKEND in ("cython", "python")


def test_env_var_forces_numpy_backend():
    import os
    import subprocess
    import sys
    env = dict(os.environ, NRF_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import nrf.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
