"""Novel-environment detection in summary space and model selection.

A context set is scored by the mean Euclidean distance of its summary to
the ``k`` nearest reference summaries from training environments. The
threshold is the ``q``-th percentile (linear interpolation) of validation
scores; a strictly larger score marks the set as novel.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError, RejectedInputError
from .trainer import ContextPool


@dataclass(frozen=True)
class DetectorState:
    references: np.ndarray
    k_neighbors: int
    threshold: float
    q: float

    def to_dict(self):
        return {"references": self.references.tolist(), "k_neighbors": self.k_neighbors,
                "threshold": self.threshold, "q": self.q}

    @classmethod
    def from_dict(cls, doc):
        return cls(np.asarray(doc["references"], dtype=np.float64), int(doc["k_neighbors"]),
                   float(doc["threshold"]), float(doc["q"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def _as_rows(a, name):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise RejectedInputError(f"{name} must be a non-empty 2-D array")
    return np.ascontiguousarray(arr)


def knn_scores(references, queries, k):
    refs = _as_rows(references, "references")
    qs = _as_rows(queries, "queries")
    if qs.shape[1] != refs.shape[1]:
        raise RejectedInputError(f"summary dimension {qs.shape[1]} != reference {refs.shape[1]}")
    return np.asarray(kernels.knn_mean_distance(qs, refs, k))


def fit_detector(train_summaries, val_summaries, k_neighbors=5, q=0.95):
    refs = _as_rows(train_summaries, "train_summaries")
    if refs.shape[0] < k_neighbors or k_neighbors < 1:
        raise ConfigurationError(
            f"need at least k={k_neighbors} reference summaries, got {refs.shape[0]}")
    if not 0 < q <= 1:
        raise ConfigurationError("q must lie in (0, 1]")
    val_scores = knn_scores(refs, val_summaries, k_neighbors)
    tau = float(np.percentile(val_scores, 100.0 * q, method="linear"))
    return DetectorState(refs, int(k_neighbors), tau, float(q))


def scores(det: DetectorState, summaries):
    return knn_scores(det.references, summaries, det.k_neighbors)


def score(det: DetectorState, summary):
    """Score of a single summary vector."""
    v = np.asarray(summary, dtype=np.float64).reshape(1, -1)
    return float(scores(det, v)[0])


def novel_mask(det: DetectorState, summaries):
    # at q = 1 the threshold is the largest validation score and nothing is novel
    s = scores(det, summaries)
    if det.q >= 1.0:
        return np.zeros(s.shape, dtype=bool)
    return s > det.threshold


def is_novel(det: DetectorState, summary):
    return bool(novel_mask(det, np.asarray(summary, dtype=np.float64).reshape(1, -1))[0])


def auroc(id_scores, ood_scores):
    """P(random OOD score > random ID score), ties counted half.

    >>> auroc([1, 3], [2, 4])
    0.75
    """
    a = np.sort(np.asarray(id_scores, dtype=np.float64).ravel())
    b = np.asarray(ood_scores, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise RejectedInputError("auroc needs non-empty score arrays")
    below = np.searchsorted(a, b, side="left")
    upto = np.searchsorted(a, b, side="right")
    wins = below.sum() + 0.5 * (upto - below).sum()
    return float(wins / (a.size * b.size))


def sample_summaries(summarizer, data, per_env, set_size, seed, envs=None):
    """``per_env`` context-set summaries for every environment in ``data``."""
    rng = np.random.default_rng([seed, 17])
    pool = ContextPool(data.x, data.env)
    envs = data.envs if envs is None else list(envs)
    env = np.repeat(envs, per_env)
    rows = pool.rows(env, set_size, rng.random((len(env), set_size)))
    out = [summarizer(data.x[rows[lo:lo + 64]]) for lo in range(0, len(env), 64)]
    return np.concatenate(out), env


@dataclass
class SelectionPolicy:
    """Baseline when the context looks familiar, invariant model when it is novel.

    ``summarizer`` maps a batch of sets ``(B, n, d)`` to summaries.
    """

    id_model: object
    ood_model: object
    detector: DetectorState
    summarizer: object
    min_context: int = 1

    def __post_init__(self):
        if self.id_model.dims["d_x"] != self.ood_model.dims["d_x"]:
            raise ConfigurationError("both models must accept the same input dimension")


def select_predict(policy: SelectionPolicy, x, context):
    """Predictions for ``x`` and a boolean per row that is True on the invariant branch.

    ``context`` is one set shared by all rows or one set per row.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    ctx = np.asarray(context, dtype=np.float64)
    if ctx.ndim == 2:
        ctx = ctx[None]
    if ctx.shape[1] < policy.min_context:
        raise ConfigurationError(
            f"context of size {ctx.shape[1]} is below the minimum {policy.min_context}")
    flags = novel_mask(policy.detector, policy.summarizer(ctx))
    if flags.shape[0] == 1 and x.shape[0] > 1:
        flags = np.repeat(flags, x.shape[0])
    pred = policy.id_model.predict(x)
    if flags.any():
        pred[flags] = policy.ood_model.predict(x[flags])
    return pred, flags
