# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Must agree with ``ctxdg._fallback`` (see tests)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor

cnp.import_array()


def sample_indices(const double[:, ::1] u, const cnp.int64_t[::1] pool_sizes,
                   bint allow_replacement=True):
    cdef Py_ssize_t B = u.shape[0]
    cdef Py_ssize_t n = u.shape[1]
    cdef Py_ssize_t b, i
    cdef cnp.int64_t P, j, t, max_pool = 1
    if pool_sizes.shape[0] != B:
        raise ValueError("pool_sizes must have one entry per row of u")
    for b in range(B):
        if pool_sizes[b] < 1:
            raise ValueError("empty pool")
        if pool_sizes[b] > max_pool:
            max_pool = pool_sizes[b]
    out = np.empty((B, n), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] o = out
    cdef unsigned char[::1] mark = np.zeros(max_pool, dtype=np.uint8)
    for b in range(B):
        P = pool_sizes[b]
        if P >= n:
            # Floyd's algorithm: one uniform per selected element
            for i in range(n):
                j = P - n + i
                t = <cnp.int64_t>floor(u[b, i] * (j + 1))
                if t > j:
                    t = j
                if mark[t]:
                    t = j
                mark[t] = 1
                o[b, i] = t
            for i in range(n):
                mark[o[b, i]] = 0
        else:
            if not allow_replacement:
                raise ValueError("pool smaller than sample size")
            for i in range(n):
                t = <cnp.int64_t>floor(u[b, i] * P)
                if t >= P:
                    t = P - 1
                o[b, i] = t
    return out


def knn_mean_distance(const double[:, ::1] queries, const double[:, ::1] refs,
                      Py_ssize_t k):
    cdef Py_ssize_t Q = queries.shape[0]
    cdef Py_ssize_t R = refs.shape[0]
    cdef Py_ssize_t d = queries.shape[1]
    cdef Py_ssize_t q, r, c, pos
    cdef double acc, diff, dist
    if refs.shape[1] != d:
        raise ValueError("dimension mismatch")
    if k < 1 or k > R:
        raise ValueError("k must be in [1, len(refs)]")
    out = np.empty(Q, dtype=np.float64)
    cdef double[::1] o = out
    cdef double[::1] best = np.empty(k, dtype=np.float64)
    cdef Py_ssize_t filled
    for q in range(Q):
        filled = 0
        for r in range(R):
            acc = 0.0
            for c in range(d):
                diff = queries[q, c] - refs[r, c]
                acc += diff * diff
            dist = sqrt(acc)
            if filled < k:
                pos = filled
                filled += 1
            elif dist < best[k - 1]:
                pos = k - 1
            else:
                continue
            # insertion into the ascending top-k buffer
            while pos > 0 and best[pos - 1] > dist:
                best[pos] = best[pos - 1]
                pos -= 1
            best[pos] = dist
        acc = 0.0
        for c in range(k):
            acc += best[c]
        o[q] = acc / k
    return out
