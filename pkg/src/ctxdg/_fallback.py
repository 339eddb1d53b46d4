"""Pure-Python/numpy versions of the compiled kernels in ``_native.pyx``.

``sample_indices`` reproduces the compiled kernel exactly (same uniforms in,
same indices out). ``knn_mean_distance`` agrees to rounding error.
"""
import math

import numpy as np


def sample_indices(u, pool_sizes, allow_replacement=True):
    u = np.ascontiguousarray(u, dtype=np.float64)
    pool_sizes = np.ascontiguousarray(pool_sizes, dtype=np.int64)
    B, n = u.shape
    if pool_sizes.shape[0] != B:
        raise ValueError("pool_sizes must have one entry per row of u")
    if B and pool_sizes.min() < 1:
        raise ValueError("empty pool")
    out = np.empty((B, n), dtype=np.int64)
    for b in range(B):
        P = int(pool_sizes[b])
        row = u[b]
        if P >= n:
            chosen = set()
            for i in range(n):
                j = P - n + i
                t = min(int(math.floor(row[i] * (j + 1))), j)
                if t in chosen:
                    t = j
                chosen.add(t)
                out[b, i] = t
        else:
            if not allow_replacement:
                raise ValueError("pool smaller than sample size")
            out[b] = np.minimum(np.floor(row * P).astype(np.int64), P - 1)
    return out


def knn_mean_distance(queries, refs, k, chunk=512):
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    refs = np.ascontiguousarray(refs, dtype=np.float64)
    if refs.shape[1] != queries.shape[1]:
        raise ValueError("dimension mismatch")
    if k < 1 or k > refs.shape[0]:
        raise ValueError("k must be in [1, len(refs)]")
    out = np.empty(queries.shape[0])
    for start in range(0, queries.shape[0], chunk):
        q = queries[start:start + chunk]
        dist = np.sqrt(((q[:, None, :] - refs[None, :, :]) ** 2).sum(axis=-1))
        nearest = np.sort(np.partition(dist, k - 1, axis=1)[:, :k], axis=1)
        out[start:start + chunk] = nearest.sum(axis=1) / k
    return out
