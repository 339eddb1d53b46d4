"""Mean-pooling set encoder.

A context set of ``n`` inputs is mapped element-wise by ``per_element``,
averaged over the set axis and passed through ``post_pool``. Batches of sets
are handled as arrays of shape ``(B, n, d_x)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RejectedInputError
from .numcore import LayerStack, ReLU, identity_stack, mlp


@dataclass(frozen=True)
class ContextSummary:
    vector: np.ndarray
    source_n: int


def as_sets(s, d_x=None):
    """Coerce a single set ``(n, d)`` or a batch ``(B, n, d)`` to 3-D."""
    arr = np.asarray(s, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise RejectedInputError(f"context sets must be (n, d) or (B, n, d), got {arr.shape}")
    if arr.shape[1] == 0:
        raise RejectedInputError("context set is empty")
    if d_x is not None and arr.shape[2] != d_x:
        raise RejectedInputError(
            f"context element dimension {arr.shape[2]} != encoder input {d_x}")
    if not np.all(np.isfinite(arr)):
        raise RejectedInputError("context set contains NaN or Inf")
    return arr


class SetEncoder:
    def __init__(self, per_element: LayerStack, post_pool: LayerStack):
        if per_element.out_dim != post_pool.in_dim:
            raise RejectedInputError("per-element output must match post-pool input")
        self.per_element = per_element
        self.post_pool = post_pool

    @property
    def in_dim(self):
        return self.per_element.in_dim

    @property
    def out_dim(self):
        return self.post_pool.out_dim

    def params(self):
        return self.per_element.params() + self.post_pool.params()

    def forward_cached(self, sets):
        sets = as_sets(sets, self.in_dim)
        B, n, d = sets.shape
        flat = sets.reshape(B * n, d)
        h, cache_e = self.per_element.forward_cached(flat)
        h = h.reshape(B, n, -1)
        # reduction over a non-trailing axis accumulates row by row, left to right
        pooled = h.sum(axis=1) / n
        out, cache_p = self.post_pool.forward_cached(pooled)
        return out, (sets.shape, flat, cache_e, pooled, cache_p)

    def forward(self, sets):
        return self.forward_cached(sets)[0]

    def backward(self, sets, upstream, cache=None):
        """Return ``(param_grads, element_grads)`` with element grads shaped like ``sets``."""
        if cache is None:
            _, cache = self.forward_cached(sets)
        shape, flat, cache_e, pooled, cache_p = cache
        B, n, d = shape
        g_post, g_pooled = self.post_pool.backward(pooled, upstream, cache_p)
        g_h = np.repeat(g_pooled[:, None, :] / n, n, axis=1).reshape(B * n, -1)
        g_elem, g_x = self.per_element.backward(flat, g_h, cache_e)
        return g_elem + g_post, g_x.reshape(shape)

    def to_dict(self):
        return {"per_element": self.per_element.to_dict(), "post_pool": self.post_pool.to_dict()}

    @classmethod
    def from_dict(cls, doc):
        return cls(LayerStack.from_dict(doc["per_element"]), LayerStack.from_dict(doc["post_pool"]))


def build_encoder(d_x, hidden=(), summary_dim=None, rng=None, linear=False):
    """Per-element MLP ``d_x -> hidden... -> d_s`` followed by an identity post-pool.

    With ``linear`` the per-element map is a single affine layer, so the
    summary is an affine function of the set mean.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    d_s = int(summary_dim or d_x)
    sizes = [d_x, d_s] if linear else [d_x, *hidden, d_s]
    per = mlp(sizes, rng)
    if not linear and hidden:
        # trailing ReLU keeps the per-element map nonlinear under an identity post-pool
        per = LayerStack(per.layers + [ReLU()])
    return SetEncoder(per, identity_stack(d_s))


def encode(enc: SetEncoder, s) -> ContextSummary:
    arr = np.asarray(s, dtype=np.float64)
    if arr.ndim != 2:
        raise RejectedInputError("encode takes one set of shape (n, d_x)")
    vec = enc.forward(arr)[0]
    return ContextSummary(vector=vec, source_n=arr.shape[0])


def encode_backward(enc: SetEncoder, s, upstream):
    """Gradients of ``upstream . encode(s)`` w.r.t. parameters and elements."""
    arr = as_sets(s, enc.in_dim)
    up = np.asarray(upstream, dtype=np.float64).reshape(arr.shape[0], enc.out_dim)
    grads, g_x = enc.backward(arr, up)
    return grads, (g_x[0] if np.asarray(s).ndim == 2 else g_x)
