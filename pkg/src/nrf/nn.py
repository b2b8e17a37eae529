"""Forward and backward passes for stacked tanh layers with a linear output.

A network is described by its parameter list
``[W1, b1, ..., WL, bL, w_out, b_out]`` and one contrast per hidden layer;
hidden layer ``l`` computes ``tanh(gamma_l * (a @ W_l + b_l))``.
"""
from __future__ import annotations

import numpy as np

from . import kernels


def hidden_count(arrays) -> int:
    return (len(arrays) - 2) // 2


def _affine(a, W, b, entries):
    if entries is None:
        return a @ W + b
    rows, cols = entries
    z = np.empty((a.shape[0], W.shape[1]))
    z[...] = b
    kernels.masked_matmul(np.ascontiguousarray(a), rows, cols, W[rows, cols], W.shape[1], z)
    return z


def forward(arrays, gammas, X, keep=False, live=None):
    """Network output for the rows of ``X``; with ``keep`` also the layer inputs and pre-activations.

    ``live`` maps a weight position to ``(rows, cols)``; such a matrix is
    treated as zero outside those entries and multiplied sparsely.
    """
    live = live or {}
    a = X
    acts = [X]
    pre = []
    for layer, g in enumerate(gammas):
        W, b = arrays[2 * layer], arrays[2 * layer + 1]
        z = _affine(a, W, b, live.get(2 * layer))
        a = np.tanh(g * z)
        if keep:
            pre.append(z)
            acts.append(a)
    out = a @ arrays[-2] + arrays[-1]
    if keep:
        return out, acts, pre
    return out


def sech2(u):
    """1 - tanh(u)^2 without cancellation for large |u|."""
    t = np.exp(-2.0 * np.abs(u))
    return 4.0 * t / ((1.0 + t) * (1.0 + t))


def backward(arrays, gammas, acts, pre, dout, live=None, out=None):
    """Gradients of a loss with per-row output derivative ``dout``.

    ``live`` optionally maps a parameter position to ``(rows, cols)`` index
    arrays; that matrix is treated as zero elsewhere, only those entries of
    its gradient are written and the rest are left untouched (zero when
    ``out`` is freshly allocated). ``out`` receives the gradients in place when
    given (arrays shaped like ``arrays``).
    """
    L = len(gammas)
    if out is None:
        out = [np.zeros_like(np.asarray(p, dtype=np.float64)) for p in arrays]
    top = acts[-1]
    out[-2][...] = top.T @ dout
    out[-1][...] = dout.sum()
    delta = np.multiply.outer(dout, arrays[-2])
    for layer in range(L - 1, -1, -1):
        dz = delta * (gammas[layer] * sech2(gammas[layer] * pre[layer]))
        pos = 2 * layer
        a_in = acts[layer]
        entries = None if live is None else live.get(pos)
        if entries is not None:
            rows, cols = entries
            a_in = np.ascontiguousarray(a_in)
            buf = np.empty(rows.shape[0])
            kernels.masked_outer(a_in, dz, rows, cols, buf)
            out[pos][rows, cols] = buf
        else:
            np.matmul(a_in.T, dz, out=out[pos])
        out[pos + 1][...] = dz.sum(axis=0)
        if layer > 0:
            W = arrays[pos]
            if entries is not None:
                delta = np.zeros((dz.shape[0], W.shape[0]))
                kernels.masked_matmul_t(dz, rows, cols, W[rows, cols], W.shape[0], delta)
            else:
                delta = dz @ W.T
    return out


def mse_gradients(arrays, gammas, X, y, live=None, out=None):
    """Batch-mean squared error and its gradient list."""
    f, acts, pre = forward(arrays, gammas, X, keep=True, live=live)
    r = f - y
    loss = float(np.mean(r * r))
    dout = (2.0 / y.shape[0]) * r
    return loss, backward(arrays, gammas, acts, pre, dout, live=live, out=out)
