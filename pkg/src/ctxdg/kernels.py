"""Hot-loop kernels with an import-time backend choice.

The compiled extension ``ctxdg._native`` is used when it was built; the
numpy/pure-Python twin in ``ctxdg._fallback`` is used otherwise, or when the
environment variable ``CTXDG_PURE_PYTHON`` is set to a non-empty value.

``BACKEND`` names the active choice ("native" or "python").
"""
import os

import numpy as np

from . import _fallback

try:
    if os.environ.get("CTXDG_PURE_PYTHON"):
        raise ImportError("pure-python backend requested")
    from . import _native as _impl
    BACKEND = "native"
except ImportError:
    _impl = _fallback
    BACKEND = "python"


def sample_indices(u, pool_sizes, allow_replacement=True):
    """Turn a ``(B, n)`` array of uniforms into pool-local indices.

    Row ``b`` draws ``n`` indices from ``range(pool_sizes[b])``: without
    replacement (Floyd's algorithm) when the pool is large enough, otherwise
    with replacement if ``allow_replacement``.
    """
    u = np.ascontiguousarray(u, dtype=np.float64)
    pool_sizes = np.ascontiguousarray(pool_sizes, dtype=np.int64)
    return _impl.sample_indices(u, pool_sizes, allow_replacement)


def knn_mean_distance(queries, refs, k):
    """Mean Euclidean distance from each query row to its ``k`` nearest refs."""
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    refs = np.ascontiguousarray(refs, dtype=np.float64)
    return _impl.knn_mean_distance(queries, refs, int(k))


def backends():
    """Return every importable backend module keyed by name (for tests)."""
    found = {"python": _fallback}
    try:
        from . import _native
        found["native"] = _native
    except ImportError:
        pass
    return found
