"""Minibatch training with per-example context sets, and evaluation.

Each iteration samples a minibatch uniformly with replacement from the
pooled training rows. For context-aware roles every example receives a
fresh context set drawn from the inputs of its own environment.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import ConfigurationError, RejectedInputError, TrainingDivergedError
from .numcore import loss_and_grad, make_optimizer


@dataclass
class TrainConfig:
    set_size: int = 32
    batch_size: int = 64
    iterations: int = 2000
    optimizer: dict = field(default_factory=lambda: {"kind": "adam", "lr": 1e-3})
    loss: Optional[str] = None
    seed: int = 0
    patience: Optional[int] = 20
    eval_every: int = 50
    allow_replacement: bool = True
    val_rows: int = 1000

    def __post_init__(self):
        if self.set_size < 1 or self.batch_size < 1 or self.iterations < 1:
            raise ConfigurationError("set_size, batch_size and iterations must be at least 1")
        if self.eval_every < 1:
            raise ConfigurationError("eval_every must be at least 1")

    @classmethod
    def from_dict(cls, doc):
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ConfigurationError(f"unknown training keys: {sorted(extra)}")
        return cls(**doc)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainReport:
    final_val_loss: Optional[float]
    best_iteration: int
    trace: list
    val_trace: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


class ContextPool:
    """Inputs grouped by environment for drawing context sets."""

    def __init__(self, x, env):
        self.x = np.asarray(x, dtype=np.float64)
        env = np.asarray(env)
        self.order = np.argsort(env, kind="stable")
        ids, starts, counts = np.unique(env[self.order], return_index=True, return_counts=True)
        self.start = {int(e): int(s) for e, s in zip(ids, starts)}
        self.size = {int(e): int(c) for e, c in zip(ids, counts)}

    def rows(self, env, n, u, allow_replacement=True):
        """Pool rows for one set per entry of ``env`` from uniforms ``u`` of shape (B, n)."""
        env = np.asarray(env).reshape(-1)
        try:
            sizes = np.array([self.size[int(e)] for e in env], dtype=np.int64)
            starts = np.array([self.start[int(e)] for e in env], dtype=np.int64)
        except KeyError as exc:
            raise RejectedInputError(f"no context inputs for environment {exc.args[0]}") from None
        local = kernels.sample_indices(np.ascontiguousarray(u, dtype=np.float64), sizes,
                                       allow_replacement)
        return self.order[starts[:, None] + local]

    def draw(self, env, n, rng, allow_replacement=True):
        env = np.asarray(env).reshape(-1)
        rows = self.rows(env, n, rng.random((len(env), n)), allow_replacement)
        return self.x[rows], rows


def _targets(model, data, idx):
    if model.role.startswith("E_"):
        return model.env_labels(data.env[idx])
    return data.y[idx]


def train(model, data, cfg: TrainConfig, val=None, recorder=None):
    """Fit ``model`` on ``data`` in place and return a :class:`TrainReport`.

    ``val`` enables early stopping on validation loss; the best parameters
    seen at an evaluation point are restored at the end. ``recorder``, if
    given, is called with ``(example_envs, context_envs)`` arrays for every
    minibatch.
    """
    if len(data) == 0:
        raise RejectedInputError("training data is empty")
    rng = np.random.default_rng([cfg.seed, 7])
    pool = ContextPool(data.x, data.env) if model.needs_context else None
    if pool is not None and not cfg.allow_replacement:
        small = {e: s for e, s in pool.size.items() if s < cfg.set_size}
        if small:
            raise ConfigurationError(
                f"environments {sorted(small)} have fewer than n={cfg.set_size} examples "
                "and sampling with replacement is disabled")
    opt = make_optimizer(cfg.optimizer, cfg.iterations)
    loss_kind = cfg.loss or model.loss_kind
    if loss_kind != model.loss_kind:
        raise ConfigurationError(f"loss {loss_kind!r} does not match role {model.role}")

    use_val = val is not None and len(val) > 0 and cfg.patience is not None
    if use_val:
        vctx = _fixed_eval_inputs(model, val, cfg.set_size, cfg.seed, cfg.val_rows)
    best = (np.inf, 0, model.get_flat())
    trace, val_trace = [], []
    stale = 0
    N = len(data)
    for it in range(1, cfg.iterations + 1):
        idx = rng.integers(0, N, cfg.batch_size)
        env = data.env[idx]
        context = None
        if pool is not None:
            context, rows = pool.draw(env, cfg.set_size, rng, cfg.allow_replacement)
            if recorder is not None:
                recorder(env, data.env[rows])
        loss, grads = model.loss_and_grads(data.x[idx], _targets(model, data, idx), context, env)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingDivergedError(it, cfg.seed)
        opt.step(model.params(), grads)
        trace.append(float(loss))
        if use_val and (it % cfg.eval_every == 0 or it == cfg.iterations):
            vloss = _loss_on(model, *vctx)
            val_trace.append((it, vloss))
            if vloss < best[0]:
                best = (vloss, it, model.get_flat())
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    if use_val:
        model.set_flat(best[2])
        return TrainReport(best[0], best[1], trace, val_trace)
    return TrainReport(None, len(trace), trace, val_trace)


def _fixed_eval_inputs(model, data, n, seed, max_rows=None, pool=None):
    """Rows, targets and context sets fixed once for repeated loss evaluation."""
    rng = np.random.default_rng([seed, 11])
    idx = np.arange(len(data))
    if max_rows is not None and len(idx) > max_rows:
        idx = np.sort(rng.choice(len(idx), max_rows, replace=False))
    rows = None
    if model.needs_context:
        src = data if pool is None else pool
        cp = ContextPool(src.x, src.env)
        rows = (cp, cp.rows(data.env[idx], n, rng.random((len(idx), n))))
    return data.x[idx], _targets(model, data, idx), data.env[idx], rows


def _loss_on(model, x, target, env, rows, chunk=256):
    total = 0.0
    for lo in range(0, len(x), chunk):
        sl = slice(lo, lo + chunk)
        summary = None
        if rows is not None:
            cp, r = rows
            summary = model.summarize(cp.x[r[sl]])
        out = model.output(x[sl], env=env[sl], summary=summary)
        total += loss_and_grad(model.loss_kind, out, target[sl])[0] * len(out)
    return total / len(x)


def predict_dataset(model, data, set_size=32, seed=0, pool=None, chunk=256):
    """Predictions for every row of ``data``.

    Context roles get one fresh set per row drawn from ``pool`` (default:
    ``data`` itself) restricted to the row's environment, so a held-out
    environment is summarized from its own inputs only.
    """
    if len(data) == 0:
        raise RejectedInputError("evaluation data is empty")
    rng = np.random.default_rng([seed, 13])
    cp = None
    if model.needs_context:
        src = data if pool is None else pool
        cp = ContextPool(src.x, src.env)
    outs = []
    for lo in range(0, len(data), chunk):
        sl = slice(lo, lo + chunk)
        summary = None
        if cp is not None:
            env = data.env[sl]
            r = cp.rows(env, set_size, rng.random((len(env), set_size)))
            summary = model.summarize(cp.x[r])
        outs.append(model.predict(data.x[sl], env=data.env[sl], summary=summary))
    return np.concatenate(outs)


def metric_value(model, data, pred, metric=None):
    metric = metric or ("accuracy" if model.task == "classification" else "neg_l2")
    if metric == "accuracy":
        target = _targets(model, data, np.arange(len(data)))
        return float(np.mean(np.argmax(pred, axis=1) == target))
    if metric == "neg_l2":
        resid = pred - data.y.reshape(pred.shape)
        return float(-np.mean(np.sum(resid ** 2, axis=1)))
    raise ConfigurationError(f"unknown metric {metric!r}")


def evaluate(model, data, metric=None, set_size=32, seed=0, pool=None):
    """Accuracy (classification) or negative mean squared error (regression)."""
    pred = predict_dataset(model, data, set_size, seed, pool)
    return metric_value(model, data, pred, metric)
