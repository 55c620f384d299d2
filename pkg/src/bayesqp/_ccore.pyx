# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Mirrors ``_pycore`` function for function."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

SOBOL_BITS = 32


def ard_gram(X1, X2, lengthscales, double outputscale):
    cdef const double[:, ::1] A = np.ascontiguousarray(X1, dtype=np.float64)
    cdef const double[:, ::1] B = np.ascontiguousarray(X2, dtype=np.float64)
    cdef const double[::1] ls = np.ascontiguousarray(lengthscales, dtype=np.float64)
    cdef Py_ssize_t n1 = A.shape[0], n2 = B.shape[0], d = A.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double s, t
    out = np.empty((n1, n2))
    cdef double[:, ::1] K = out
    cdef double[::1] inv_l2 = np.empty(d)
    for k in range(d):
        inv_l2[k] = 1.0 / (ls[k] * ls[k])
    for i in range(n1):
        for j in range(n2):
            s = 0.0
            for k in range(d):
                t = A[i, k] - B[j, k]
                s += t * t * inv_l2[k]
            K[i, j] = outputscale * exp(-0.5 * s)
    return out


def lengthscale_contract(X, KW):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] W = np.ascontiguousarray(KW, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], d = Xv.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double w, t
    out = np.zeros(d)
    cdef double[::1] g = out
    # symmetric: visit the strict upper triangle once and double it
    for j in range(n):
        for k in range(j + 1, n):
            w = W[j, k] + W[k, j]
            if w == 0.0:
                continue
            for i in range(d):
                t = Xv[j, i] - Xv[k, i]
                g[i] += w * t * t
    return out


def se_grad_hess_sum(x, X, alpha, lengthscales, double outputscale):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] av = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef const double[::1] ls = np.ascontiguousarray(lengthscales, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], d = Xv.shape[1]
    cdef Py_ssize_t i, j, a, b
    cdef double s, t, kj, w, wsum = 0.0
    kvec_arr = np.empty(n)
    G_arr = np.empty((d, n))
    H_arr = np.zeros((d, d))
    cdef double[::1] kvec = kvec_arr
    cdef double[:, ::1] G = G_arr
    cdef double[:, ::1] H = H_arr
    cdef double[::1] inv_l2 = np.empty(d)
    cdef double[::1] r = np.empty(d)
    for i in range(d):
        inv_l2[i] = 1.0 / (ls[i] * ls[i])
    for j in range(n):
        s = 0.0
        for i in range(d):
            t = xv[i] - Xv[j, i]
            r[i] = t * inv_l2[i]
            s += t * r[i]
        kj = outputscale * exp(-0.5 * s)
        kvec[j] = kj
        for i in range(d):
            G[i, j] = -kj * r[i]
        w = av[j] * kj
        wsum += w
        for a in range(d):
            for b in range(a, d):
                H[a, b] += w * r[a] * r[b]
    for a in range(d):
        H[a, a] -= wsum * inv_l2[a]
        for b in range(a + 1, d):
            H[b, a] = H[a, b]
    return kvec_arr, G_arr, H_arr


def sobol_block(V, long long start, long long n):
    cdef const cnp.uint64_t[:, ::1] Vv = np.ascontiguousarray(V, dtype=np.uint64)
    cdef Py_ssize_t dim = Vv.shape[0]
    cdef Py_ssize_t row, k, bit, c
    cdef unsigned long long gray, i, j
    out_arr = np.empty((n, dim))
    if n == 0:
        return out_arr
    cdef double[:, ::1] out = out_arr
    cdef cnp.uint64_t[::1] state = np.zeros(dim, dtype=np.uint64)
    cdef double scale = 1.0 / 4294967296.0
    gray = <unsigned long long>start ^ (<unsigned long long>start >> 1)
    bit = 0
    while gray:
        if gray & 1:
            for k in range(dim):
                state[k] ^= Vv[k, bit]
        gray >>= 1
        bit += 1
    for k in range(dim):
        out[0, k] = state[k] * scale
    i = <unsigned long long>start
    for row in range(1, n):
        c = 0
        j = i
        while j & 1:
            j >>= 1
            c += 1
        for k in range(dim):
            state[k] ^= Vv[k, c]
            out[row, k] = state[k] * scale
        i += 1
    return out_arr
