"""Model roles used by the evaluation protocol.

=============  ==============================  =================
role           conditioning                    output
=============  ==============================  =================
Y_given_X_S    x and a context set             target
Y_given_X      x                               target
Y_given_X_E    x and the true environment      target
E_given_X_S    x and a context set             environment
E_given_X      x                               environment
invariant      a masked subset of x            target
=============  ==============================  =================

Context-aware roles concatenate ``[x, h(S)]`` before the inference net.
The oracle appends a reference-coded environment indicator (one column per
training environment except the first), so with a single environment it is
architecturally identical to ``Y_given_X``.
"""
from __future__ import annotations

import json

import numpy as np

from .errors import RejectedInputError
from .numcore import LayerStack, loss_and_grad, mlp, softmax
from .setenc import SetEncoder, as_sets, build_encoder

ROLES = ("Y_given_X_S", "Y_given_X", "Y_given_X_E", "E_given_X_S", "E_given_X", "invariant")
CONTEXT_ROLES = ("Y_given_X_S", "E_given_X_S")


class Model:
    """A trained or freshly initialized model for one role.

    Parameters
    ----------
    role : str
    dims : dict
        ``d_x``, ``d_y`` (regression width or class count), ``task``
        ("regression" or "classification") and ``envs``, the list of
        training environment ids in label order.
    inference : LayerStack
    encoder : SetEncoder, optional
    mask : sequence of int, optional
        Feature columns seen by the invariant role.
    """

    def __init__(self, role, dims, inference, encoder=None, mask=None, config=None):
        if role not in ROLES:
            raise RejectedInputError(f"unknown role {role!r}")
        self.role = role
        self.dims = dict(dims)
        self.inference = inference
        self.encoder = encoder
        self.mask = None if mask is None else [int(i) for i in mask]
        self.config = dict(config or {})
        self._env_index = {int(e): i for i, e in enumerate(self.dims.get("envs", []))}

    # -- structure --------------------------------------------------------

    @property
    def task(self):
        if self.role.startswith("E_"):
            return "classification"
        return self.dims.get("task", "regression")

    @property
    def needs_context(self):
        return self.role in CONTEXT_ROLES

    @property
    def needs_env(self):
        return self.role == "Y_given_X_E"

    @property
    def loss_kind(self):
        return "softmax_ce" if self.task == "classification" else "mse"

    def params(self):
        enc = self.encoder.params() if self.encoder is not None else []
        return enc + self.inference.params()

    @property
    def n_params(self):
        return sum(p.size for p in self.params())

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.params()]) if self.params() else np.zeros(0)

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        pos = 0
        for p in self.params():
            p[...] = flat[pos:pos + p.size].reshape(p.shape)
            pos += p.size
        if pos != flat.size:
            raise RejectedInputError("flat parameter vector has the wrong length")

    def copy(self):
        return Model.from_dict(self.to_dict())

    # -- inputs -----------------------------------------------------------

    def env_labels(self, env):
        """Map environment ids to dense label indices of the training envs."""
        env = np.asarray(env).reshape(-1)
        try:
            return np.array([self._env_index[int(e)] for e in env], dtype=np.int64)
        except KeyError as exc:
            raise RejectedInputError(f"environment {exc.args[0]} not seen in training") from None

    def _features(self, x, env=None, summary=None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.dims["d_x"]:
            raise RejectedInputError(f"x must have {self.dims['d_x']} columns, got shape {x.shape}")
        if self.role == "invariant":
            return x[:, self.mask]
        if self.needs_context:
            return np.concatenate([x, summary], axis=1)
        if self.needs_env:
            if env is None:
                raise RejectedInputError("the oracle role requires env")
            labels = self.env_labels(env)
            if labels.shape[0] != x.shape[0]:
                raise RejectedInputError("one env per row is required")
            onehot = np.zeros((x.shape[0], max(len(self._env_index) - 1, 0)))
            rows = np.nonzero(labels > 0)[0]
            onehot[rows, labels[rows] - 1] = 1.0
            return np.concatenate([x, onehot], axis=1)
        return x

    def summarize(self, context):
        """Summary vectors for one set ``(n, d)`` or a batch ``(B, n, d)``."""
        if self.encoder is None:
            raise RejectedInputError(f"role {self.role} has no set encoder")
        return self.encoder.forward(context)

    def _summary_for(self, x, context, summary):
        if not self.needs_context:
            return None
        rows = np.asarray(x).reshape(-1, self.dims["d_x"]).shape[0]
        if summary is None:
            if context is None:
                raise RejectedInputError(f"role {self.role} requires a context set")
            summary = self.summarize(context)
        summary = np.asarray(summary, dtype=np.float64)
        if summary.ndim == 1:
            summary = summary[None, :]
        if summary.shape[0] == 1 and rows > 1:
            summary = np.repeat(summary, rows, axis=0)
        if summary.shape[0] != rows:
            raise RejectedInputError("need one context set per row or a single shared set")
        return summary

    # -- inference --------------------------------------------------------

    def output(self, x, context=None, env=None, summary=None):
        """Raw network output (logits for classification)."""
        s = self._summary_for(x, context, summary)
        return self.inference.forward(self._features(x, env, s))

    def predict(self, x, context=None, env=None, summary=None):
        """Predictions; class probabilities for classification roles.

        ``context`` is one set shared by every row or one set per row.
        """
        out = self.output(x, context, env, summary)
        return softmax(out) if self.task == "classification" else out

    def penultimate(self, x, context=None, env=None, summary=None):
        s = self._summary_for(x, context, summary)
        return self.inference.penultimate(self._features(x, env, s))

    def loss_and_grads(self, x, target, context=None, env=None):
        """Loss on a minibatch and gradients aligned with :meth:`params`."""
        if self.needs_context:
            sets = as_sets(context, self.dims["d_x"])
            summary, enc_cache = self.encoder.forward_cached(sets)
            s = self._summary_for(x, None, summary)
        else:
            s = None
        feats = self._features(x, env, s)
        out, cache = self.inference.forward_cached(feats)
        loss, g_out = loss_and_grad(self.loss_kind, out, target)
        g_inf, g_feats = self.inference.backward(feats, g_out, cache)
        if not self.needs_context:
            return loss, g_inf
        g_summary = g_feats[:, self.dims["d_x"]:]
        g_enc, _ = self.encoder.backward(sets, g_summary, enc_cache)
        return loss, g_enc + g_inf

    # -- serialization ----------------------------------------------------

    def to_dict(self):
        return {
            "role": self.role,
            "dims": self.dims,
            "config": self.config,
            "mask": self.mask,
            "inference": self.inference.to_dict(),
            "encoder": None if self.encoder is None else self.encoder.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc):
        enc = doc.get("encoder")
        return cls(doc["role"], doc["dims"], LayerStack.from_dict(doc["inference"]),
                   encoder=None if enc is None else SetEncoder.from_dict(enc),
                   mask=doc.get("mask"), config=doc.get("config"))


def save_model(model, path):
    # json writes floats with repr, the shortest string that round-trips exactly
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_model(path):
    with open(path) as fh:
        return Model.from_dict(json.load(fh))


def build(role, dims, config=None):
    """Freshly initialized model.

    Config keys: ``hidden`` (inference widths), ``encoder_hidden``,
    ``summary_dim``, ``linear`` (no hidden layers anywhere), ``seed``,
    ``mask`` (invariant role).

    Examples
    --------
    >>> m = build("E_given_X_S", {"d_x": 2, "envs": [0, 1, 2, 3, 4]})
    >>> m.inference.out_dim
    5
    """
    if role not in ROLES:
        raise RejectedInputError(f"unknown role {role!r}")
    cfg = dict(config or {})
    dims = dict(dims)
    d_x = int(dims["d_x"])
    envs = [int(e) for e in dims.get("envs", [])]
    dims["envs"] = envs
    linear = bool(cfg.get("linear", False))
    hidden = [] if linear else [int(h) for h in cfg.get("hidden", [])]
    seed = int(cfg.get("seed", 0))
    if role.startswith("E_"):
        if len(envs) < 1:
            raise RejectedInputError("environment classifiers need dims['envs']")
        d_out = len(envs)
        dims["task"] = "classification"
    else:
        d_out = int(dims.get("d_y", 1))
        dims.setdefault("task", "regression")
    # inference net and encoder draw from separate streams so that roles
    # sharing an architecture also share their initial weights
    inf_rng = np.random.default_rng([seed, 0])
    encoder = None
    mask = None
    if role in CONTEXT_ROLES:
        d_s = int(cfg.get("summary_dim", d_x))
        enc_hidden = [] if linear else [int(h) for h in cfg.get("encoder_hidden", [])]
        encoder = build_encoder(d_x, enc_hidden, d_s, np.random.default_rng([seed, 1]), linear)
        d_in = d_x + d_s
    elif role == "Y_given_X_E":
        d_in = d_x + max(len(envs) - 1, 0)
    elif role == "invariant":
        mask = [int(i) for i in cfg.get("mask", range(d_x))]
        if not mask or min(mask) < 0 or max(mask) >= d_x:
            raise RejectedInputError(f"invariant mask {mask} invalid for d_x = {d_x}")
        d_in = len(mask)
    else:
        d_in = d_x
    inference = mlp([d_in, *hidden, d_out], inf_rng)
    return Model(role, dims, inference, encoder, mask, cfg)
