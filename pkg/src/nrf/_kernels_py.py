"""Pure numpy versions of the hot loops.

Every function here has a twin in ``_kernels.pyx`` that performs the same
floating point operations in the same order, so both backends agree bit for
bit. Keep the two files in sync.
"""
import numpy as np


def split_gains(xs, ys):
    """Variance-reduction gain of every cut of a sorted node.

    ``xs`` holds one feature's values sorted ascending, ``ys`` the centered
    targets in the same order. Entry ``i`` (``1 <= i < n``) is the gain of
    putting ``xs[:i]`` left and ``xs[i:]`` right. Entries where
    ``xs[i] == xs[i-1]`` (no cut possible) and entry 0 are ``-inf``.
    """
    n = xs.shape[0]
    out = np.full(n, -np.inf)
    if n < 2:
        return out
    cs = np.cumsum(ys)
    s = cs[n - 1]
    total = s * s / n
    sl = cs[: n - 1]
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    sr = s - sl
    g = (sl * sl / nl + sr * sr / nr - total) / n
    valid = xs[1:] > xs[:-1]
    out[1:][valid] = g[valid]
    return out


def route(X, feature, threshold, left, right):
    """Leaf node id reached by each row of ``X`` (``x >= threshold`` goes right)."""
    n = X.shape[0]
    node = np.zeros(n, dtype=np.intp)
    active = feature[node] >= 0
    rows = np.arange(n)
    while active.any():
        r = rows[active]
        nd = node[r]
        go_right = X[r, feature[nd]] >= threshold[nd]
        node[r] = np.where(go_right, right[nd], left[nd])
        active[r] = feature[node[r]] >= 0
    return node


def adam_update(theta, grad, m, v, step, beta1, beta2, eps, inv_sqrt_bc2):
    """In-place Adam step on flat float64 arrays.

    ``step = lr / (1 - beta1**t)`` and ``inv_sqrt_bc2 = 1 / sqrt(1 - beta2**t)``,
    so the update ``step * m / (sqrt(v) * inv_sqrt_bc2 + eps)`` equals the
    bias-corrected ``lr * m_hat / (sqrt(v_hat) + eps)``.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    theta -= step * m / (np.sqrt(v) * inv_sqrt_bc2 + eps)


def adam_update_indexed(theta, grad, m, v, idx, step, beta1, beta2, eps, inv_sqrt_bc2):
    """Adam step restricted to positions ``idx``; other entries are untouched."""
    g = grad[idx]
    mi = m[idx] * beta1
    mi += (1.0 - beta1) * g
    vi = v[idx] * beta2
    vi += (1.0 - beta2) * (g * g)
    m[idx] = mi
    v[idx] = vi
    theta[idx] -= step * mi / (np.sqrt(vi) * inv_sqrt_bc2 + eps)


# The three masked-product kernels below agree with their compiled twins up
# to summation order only (BLAS is used here).

def _dense(rows, cols, vals, shape):
    W = np.zeros(shape)
    W[rows, cols] = vals
    return W


def masked_matmul(A, rows, cols, vals, n_out, out):
    """``out += A @ W`` where W is zero except ``W[rows, cols] = vals``."""
    out += A @ _dense(rows, cols, vals, (A.shape[1], n_out))


def masked_matmul_t(D, rows, cols, vals, n_in, out):
    """``out += D @ W.T`` for the same sparse W."""
    out += D @ _dense(rows, cols, vals, (n_in, D.shape[1])).T


def masked_outer(A, D, rows, cols, out):
    """``out[k] = sum_b A[b, rows[k]] * D[b, cols[k]]``."""
    out[...] = np.einsum("bk,bk->k", A[:, rows], D[:, cols])
