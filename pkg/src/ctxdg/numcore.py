"""Dense feed-forward layers with hand-written backpropagation.

Everything is float64. A :class:`LayerStack` is an ordered list of
``Affine``, ``ReLU`` and ``Identity`` layers; ``forward`` is a pure function
of (parameters, input) and ``backward`` returns gradients in the order of
:meth:`LayerStack.params`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, RejectedInputError

LOSS_KINDS = ("mse", "softmax_ce")


def as_matrix(x, name="input"):
    """Validate and return ``x`` as a finite 2-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise RejectedInputError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise RejectedInputError(f"{name} contains NaN or Inf")
    return arr


class Affine:
    kind = "affine"

    def __init__(self, W, b=None):
        self.W = np.array(W, dtype=np.float64)
        if self.W.ndim != 2:
            raise RejectedInputError("affine weight must be 2-D (in, out)")
        out = self.W.shape[1]
        self.b = np.zeros(out) if b is None else np.array(b, dtype=np.float64).reshape(out)

    @property
    def in_dim(self):
        return self.W.shape[0]

    @property
    def out_dim(self):
        return self.W.shape[1]

    def params(self):
        return [self.W, self.b]

    def forward(self, x):
        return x @ self.W + self.b

    def backward(self, x, upstream):
        return [x.T @ upstream, upstream.sum(axis=0)], upstream @ self.W.T


class ReLU:
    kind = "relu"
    in_dim = out_dim = None

    def params(self):
        return []

    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, x, upstream):
        # subgradient at exactly 0 is 0
        return [], upstream * (x > 0.0)


class Identity:
    kind = "identity"
    in_dim = out_dim = None

    def params(self):
        return []

    def forward(self, x):
        return x

    def backward(self, x, upstream):
        return [], upstream


class LayerStack:
    """A sequential network. ``dim`` is needed only when no layer is affine."""

    def __init__(self, layers, dim=None):
        self.layers = list(layers)
        affine = [layer for layer in self.layers if isinstance(layer, Affine)]
        for prev, nxt in zip(affine, affine[1:]):
            if prev.out_dim != nxt.in_dim:
                raise RejectedInputError(
                    f"adjacent affine layers disagree: {prev.out_dim} != {nxt.in_dim}")
        if affine:
            self.in_dim, self.out_dim = affine[0].in_dim, affine[-1].out_dim
        elif dim is None:
            raise RejectedInputError("a stack without affine layers needs an explicit dim")
        else:
            self.in_dim = self.out_dim = int(dim)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    @property
    def n_params(self):
        return sum(p.size for p in self.params())

    def _check(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise RejectedInputError(
                f"expected input with {self.in_dim} columns, got shape {x.shape}")

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def forward_cached(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        inputs = []
        for layer in self.layers:
            inputs.append(x)
            x = layer.forward(x)
        return x, inputs

    def backward(self, x, upstream, cache=None):
        """Return ``(param_grads, input_grad)`` for a scalar loss.

        ``upstream`` is dL/d(output). ``cache`` is the second value of
        :meth:`forward_cached`; the forward pass is recomputed without it.
        """
        if cache is None:
            _, cache = self.forward_cached(x)
        upstream = np.asarray(upstream, dtype=np.float64)
        rows = cache[0].shape[0] if cache else np.asarray(x).shape[0]
        if upstream.shape != (rows, self.out_dim):
            raise RejectedInputError(
                f"upstream shape {upstream.shape} != ({rows}, {self.out_dim})")
        grads = []
        g = upstream
        for layer, inp in zip(reversed(self.layers), reversed(cache)):
            layer_grads, g = layer.backward(inp, g)
            grads[:0] = layer_grads
        return grads, g

    def penultimate(self, x):
        """Activations entering the last affine layer (the input if none)."""
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        last = max((i for i, layer in enumerate(self.layers) if isinstance(layer, Affine)),
                   default=None)
        for layer in self.layers[:last]:
            x = layer.forward(x)
        return x

    def copy(self):
        return LayerStack.from_dict(self.to_dict())

    def to_dict(self):
        specs = []
        for layer in self.layers:
            if isinstance(layer, Affine):
                specs.append({"kind": "affine", "in": layer.in_dim, "out": layer.out_dim,
                              "W": layer.W.ravel().tolist(), "b": layer.b.tolist()})
            else:
                specs.append({"kind": layer.kind})
        return {"in_dim": self.in_dim, "out_dim": self.out_dim, "layers": specs}

    @classmethod
    def from_dict(cls, doc):
        layers = []
        for spec in doc["layers"]:
            if spec["kind"] == "affine":
                W = np.array(spec["W"], dtype=np.float64).reshape(spec["in"], spec["out"])
                layers.append(Affine(W, spec["b"]))
            elif spec["kind"] == "relu":
                layers.append(ReLU())
            elif spec["kind"] == "identity":
                layers.append(Identity())
            else:
                raise RejectedInputError(f"unknown layer kind {spec['kind']!r}")
        return cls(layers, dim=doc["in_dim"])


def forward(stack, x):
    return stack.forward(x)


def backward(stack, x, upstream):
    return stack.backward(x, upstream)


def glorot_uniform(fan_in, fan_out, rng):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def mlp(sizes, rng, activation="relu"):
    """Affine layers through ``sizes`` with ReLU between them (none at the end)."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2:
        raise RejectedInputError("mlp needs at least input and output sizes")
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        layers.append(Affine(glorot_uniform(fan_in, fan_out, rng), np.zeros(fan_out)))
        if i < len(sizes) - 2 and activation == "relu":
            layers.append(ReLU())
    return LayerStack(layers)


def identity_stack(dim):
    return LayerStack([Identity()], dim=dim)


# -- losses ---------------------------------------------------------------

def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def loss_and_grad(kind, prediction, target):
    """Scalar loss and its gradient with respect to ``prediction``.

    ``mse`` is the mean over rows of the per-row sum of squared residuals.
    ``softmax_ce`` takes logits and one integer class index per row.
    """
    pred = np.asarray(prediction, dtype=np.float64)
    rows = pred.shape[0]
    if kind == "mse":
        tgt = np.asarray(target, dtype=np.float64).reshape(pred.shape)
        resid = pred - tgt
        # overflow surfaces as inf and is reported by the caller as divergence
        with np.errstate(over="ignore"):
            return float((resid ** 2).sum() / rows), 2.0 * resid / rows
    if kind == "softmax_ce":
        idx = np.asarray(target).reshape(-1)
        if idx.shape[0] != rows:
            raise RejectedInputError("one class index per row is required")
        if not np.all(idx == np.round(idx)):
            raise RejectedInputError("class indices must be integers")
        idx = idx.astype(np.int64)
        if idx.min(initial=0) < 0 or idx.max(initial=0) >= pred.shape[1]:
            raise RejectedInputError(
                f"class index out of range [0, {pred.shape[1]})")
        logp = log_softmax(pred)
        loss = -logp[np.arange(rows), idx].sum() / rows
        grad = np.exp(logp)
        grad[np.arange(rows), idx] -= 1.0
        return float(loss), grad / rows
    raise RejectedInputError(f"unknown loss kind {kind!r}")


# -- optimizers -----------------------------------------------------------

@dataclass
class Schedule:
    """Learning-rate schedule alpha(step), step counted from 1."""

    lr: float = 1e-3
    kind: str = "constant"
    gamma: float = 0.5
    every: int = 1000
    total: int = 1
    floor: float = 0.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigurationError("learning rate must be positive")
        if self.kind not in ("constant", "step", "cosine"):
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}")

    def __call__(self, step):
        if self.kind == "step":
            return self.lr * self.gamma ** ((step - 1) // self.every)
        if self.kind == "cosine":
            frac = min(step - 1, self.total) / max(self.total, 1)
            lo = max(self.floor, 1e-12 * self.lr)
            return lo + 0.5 * (self.lr - lo) * (1.0 + math.cos(math.pi * frac))
        return self.lr


@dataclass
class Optimizer:
    """SGD (optionally with momentum) or Adam, updating arrays in place."""

    kind: str = "adam"
    schedule: Schedule = field(default_factory=Schedule)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.0
    step_count: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer kind {self.kind!r}")
        self._m = None
        self._v = None

    def step(self, params, grads):
        self.step_count += 1
        t = self.step_count
        lr = self.schedule(t)
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        if self.kind == "sgd":
            for p, g, m in zip(params, grads, self._m):
                m *= self.momentum
                m += g
                p -= lr * m
            return
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** t
        corr2 = 1.0 - b2 ** t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


def make_optimizer(cfg=None, iterations=1):
    """Build an :class:`Optimizer` from a config mapping.

    Keys: ``kind`` (adam|sgd), ``lr``, ``schedule`` (constant|step|cosine),
    ``gamma``, ``every``, ``floor``, ``beta1``, ``beta2``, ``eps``, ``momentum``.
    """
    cfg = dict(cfg or {})
    sched = Schedule(lr=float(cfg.pop("lr", 1e-3)), kind=cfg.pop("schedule", "constant"),
                     gamma=float(cfg.pop("gamma", 0.5)), every=int(cfg.pop("every", 1000)),
                     total=int(iterations), floor=float(cfg.pop("floor", 0.0)))
    kind = cfg.pop("kind", "adam")
    known = {"beta1", "beta2", "eps", "momentum"}
    extra = set(cfg) - known
    if extra:
        raise ConfigurationError(f"unknown optimizer keys: {sorted(extra)}")
    return Optimizer(kind=kind, schedule=sched, **{k: float(v) for k, v in cfg.items()})


# -- gradient checking ----------------------------------------------------

def finite_difference(fn, arrays, step=1e-5):
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``arrays``.

    The arrays are perturbed in place and restored.
    """
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = fn()
            flat[i] = orig - step
            down = fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        out.append(g)
    return out


def max_relative_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a.size:
            err = np.abs(a - n) / np.maximum(1.0, np.abs(a) + np.abs(n))
            worst = max(worst, float(err.max()))
    return worst


def grad_check(stack, loss, x, y, step=1e-5):
    """Largest |analytic - numeric| / max(1, |analytic| + |numeric|) over parameters."""
    if not step > 0:
        raise RejectedInputError("step must be positive")
    x = as_matrix(x, "x")
    out, cache = stack.forward_cached(x)
    _, upstream = loss_and_grad(loss, out, y)
    analytic, _ = stack.backward(x, upstream, cache)
    numeric = finite_difference(lambda: loss_and_grad(loss, stack.forward(x), y)[0],
                                stack.params(), step)
    return max_relative_error(analytic, numeric)
