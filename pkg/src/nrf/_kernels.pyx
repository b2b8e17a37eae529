# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Mirrors ``_kernels_py`` operation for operation."""
import numpy as np

from libc.math cimport sqrt, INFINITY


def split_gains(const double[::1] xs, const double[::1] ys):
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t i
    cdef double s = 0.0, sl = 0.0, sr, nl, nr, total
    out_arr = np.full(n, -np.inf)
    cdef double[::1] out = out_arr
    if n < 2:
        return out_arr
    for i in range(n):
        s = s + ys[i]
    total = s * s / n
    for i in range(1, n):
        sl = sl + ys[i - 1]
        if xs[i] > xs[i - 1]:
            nl = <double>i
            nr = n - nl
            sr = s - sl
            out[i] = (sl * sl / nl + sr * sr / nr - total) / n
    return out_arr


def route(const double[:, :] X, const Py_ssize_t[::1] feature,
          const double[::1] threshold, const Py_ssize_t[::1] left,
          const Py_ssize_t[::1] right):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t i, nd, j
    out_arr = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[::1] out = out_arr
    for i in range(n):
        nd = 0
        j = feature[nd]
        while j >= 0:
            if X[i, j] >= threshold[nd]:
                nd = right[nd]
            else:
                nd = left[nd]
            j = feature[nd]
        out[i] = nd
    return out_arr


def adam_update(double[::1] theta, const double[::1] grad, double[::1] m,
                double[::1] v, double step, double beta1, double beta2,
                double eps, double inv_sqrt_bc2):
    cdef Py_ssize_t i, n = theta.shape[0]
    cdef double c1 = 1.0 - beta1, c2 = 1.0 - beta2, g, mi, vi
    for i in range(n):
        g = grad[i]
        mi = m[i] * beta1 + c1 * g
        vi = v[i] * beta2 + c2 * (g * g)
        m[i] = mi
        v[i] = vi
        theta[i] = theta[i] - step * mi / (sqrt(vi) * inv_sqrt_bc2 + eps)


def adam_update_indexed(double[::1] theta, const double[::1] grad,
                        double[::1] m, double[::1] v, const Py_ssize_t[::1] idx,
                        double step, double beta1, double beta2, double eps,
                        double inv_sqrt_bc2):
    cdef Py_ssize_t k, i, n = idx.shape[0]
    cdef double c1 = 1.0 - beta1, c2 = 1.0 - beta2, g, mi, vi
    for k in range(n):
        i = idx[k]
        g = grad[i]
        mi = m[i] * beta1 + c1 * g
        vi = v[i] * beta2 + c2 * (g * g)
        m[i] = mi
        v[i] = vi
        theta[i] = theta[i] - step * mi / (sqrt(vi) * inv_sqrt_bc2 + eps)


def masked_matmul(const double[:, ::1] A, const Py_ssize_t[::1] rows,
                  const Py_ssize_t[::1] cols, const double[::1] vals,
                  Py_ssize_t n_out, double[:, ::1] out):
    cdef Py_ssize_t b, k, nnz = rows.shape[0]
    for b in range(A.shape[0]):
        for k in range(nnz):
            out[b, cols[k]] += A[b, rows[k]] * vals[k]


def masked_matmul_t(const double[:, ::1] D, const Py_ssize_t[::1] rows,
                    const Py_ssize_t[::1] cols, const double[::1] vals,
                    Py_ssize_t n_in, double[:, ::1] out):
    cdef Py_ssize_t b, k, nnz = rows.shape[0]
    for b in range(D.shape[0]):
        for k in range(nnz):
            out[b, rows[k]] += D[b, cols[k]] * vals[k]


def masked_outer(const double[:, ::1] A, const double[:, ::1] D,
                 const Py_ssize_t[::1] rows, const Py_ssize_t[::1] cols,
                 double[::1] out):
    cdef Py_ssize_t b, k, nnz = rows.shape[0]
    cdef double acc
    for k in range(nnz):
        acc = 0.0
        for b in range(A.shape[0]):
            acc = acc + A[b, rows[k]] * D[b, cols[k]]
        out[k] = acc
