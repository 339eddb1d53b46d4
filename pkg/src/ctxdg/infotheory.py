"""Exact information quantities on finite discrete processes.

A :class:`DiscreteDGP` factorizes as ``p(E) p(X|E) p(Y|X,E)``. An i.i.d.
context set of ``n`` further X-draws from the same E is summarized by its
count vector, which is sufficient for any exchangeable functional; the lift
to ``(E, X, Y, S)`` is therefore exact and far smaller than enumerating
ordered tuples.

All quantities are in nats.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CapacityError, RejectedInputError, VerificationFailedError

LIFT_LIMIT = 10 ** 6
SATISFIED = 1e-6
VIOLATED = 1e-9


def to_bits(nats):
    return nats / math.log(2.0)


def criterion_status(value):
    """Banded reading of an information value: satisfied, violated or indeterminate."""
    if value > SATISFIED:
        return "satisfied"
    if value <= VIOLATED:
        return "violated"
    return "indeterminate"


@dataclass
class DiscreteDGP:
    E: list
    X: list
    Y: list
    p_E: np.ndarray
    p_X_given_E: np.ndarray
    p_Y_given_XE: np.ndarray

    def __post_init__(self):
        self.E, self.X, self.Y = list(self.E), list(self.X), list(self.Y)
        self.p_E = np.asarray(self.p_E, dtype=np.float64)
        self.p_X_given_E = np.asarray(self.p_X_given_E, dtype=np.float64)
        self.p_Y_given_XE = np.asarray(self.p_Y_given_XE, dtype=np.float64)
        nE, nX, nY = len(self.E), len(self.X), len(self.Y)
        if self.p_E.shape != (nE,) or self.p_X_given_E.shape != (nE, nX) \
                or self.p_Y_given_XE.shape != (nE, nX, nY):
            raise RejectedInputError("probability tables do not match the supports")
        for name, table in (("p_E", self.p_E), ("p_X_given_E", self.p_X_given_E),
                            ("p_Y_given_XE", self.p_Y_given_XE)):
            if np.any(table < 0) or not np.all(np.isfinite(table)):
                raise RejectedInputError(f"{name} has negative or non-finite entries")
            if np.max(np.abs(table.sum(axis=-1) - 1.0)) > 1e-12:
                raise RejectedInputError(f"{name} rows must sum to 1")

    def base_joint(self):
        p = self.p_E[:, None, None] * self.p_X_given_E[:, :, None] * self.p_Y_given_XE
        return Joint(p, ("E", "X", "Y"), {"E": self.E, "X": self.X, "Y": self.Y})

    def to_dict(self):
        return {"E": self.E, "X": self.X, "Y": self.Y, "p_E": self.p_E.tolist(),
                "p_X_given_E": self.p_X_given_E.tolist(),
                "p_Y_given_XE": self.p_Y_given_XE.tolist()}

    @classmethod
    def from_dict(cls, doc):
        missing = [k for k in ("E", "X", "Y", "p_E", "p_X_given_E", "p_Y_given_XE") if k not in doc]
        if missing:
            raise RejectedInputError(f"DGP document lacks {missing}")
        return cls(doc["E"], doc["X"], doc["Y"], doc["p_E"], doc["p_X_given_E"], doc["p_Y_given_XE"])


class Joint:
    """A pmf over named discrete axes; ``values[name]`` lists each axis' support."""

    def __init__(self, p, names, values=None):
        self.p = np.asarray(p, dtype=np.float64)
        self.names = tuple(names)
        if self.p.ndim != len(self.names):
            raise RejectedInputError("one name per axis is required")
        self.values = dict(values or {})

    def axis(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise RejectedInputError(f"unknown variable {name!r}; have {self.names}") from None

    def total(self):
        return float(self.p.sum())

    def marginal(self, names):
        keep = [self.axis(n) for n in names]
        drop = tuple(i for i in range(self.p.ndim) if i not in keep)
        m = self.p.sum(axis=drop) if drop else self.p
        # reorder to the requested order
        order = sorted(keep)
        m = np.moveaxis(m, [order.index(k) for k in keep], range(len(keep)))
        return Joint(m, names, {n: self.values.get(n) for n in names})

    def derive(self, name, fn, inputs):
        """Add variable ``name = fn(*input_values)`` as a new axis."""
        if name in self.names:
            raise RejectedInputError(f"variable {name!r} already exists")
        axes = [self.axis(n) for n in inputs]
        shape = [self.p.shape[a] for a in axes]
        supports = [self.values.get(n) or list(range(s)) for n, s in zip(inputs, shape)]
        raw = {}
        for idx in np.ndindex(*shape):
            raw[idx] = fn(*(sup[i] for sup, i in zip(supports, idx)))
        levels = sorted(set(raw.values()))
        code = np.empty(shape, dtype=np.int64)
        for idx, v in raw.items():
            code[idx] = levels.index(v)
        # broadcast the code array against the full joint
        bshape = [1] * self.p.ndim
        for a, s in zip(axes, shape):
            bshape[a] = s
        order = np.argsort(axes)
        code_b = np.transpose(code, order).reshape(bshape)
        out = np.zeros(self.p.shape + (len(levels),))
        for k in range(len(levels)):
            out[..., k] = np.where(code_b == k, self.p, 0.0)
        values = dict(self.values)
        values[name] = levels
        return Joint(out, self.names + (name,), values)


def _group(arg):
    if arg is None:
        return []
    if isinstance(arg, str):
        return [arg]
    return list(arg)


def _grouped(joint, groups):
    """Marginal over the union of ``groups`` reshaped to one axis per group."""
    names = [n for g in groups for n in g]
    m = joint.marginal(names).p
    shape, pos = [], 0
    for g in groups:
        size = int(np.prod(m.shape[pos:pos + len(g)])) if g else 1
        shape.append(size)
        pos += len(g)
    return m.reshape(shape)


def _xlogx_ratio(p, num, den):
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) + np.log(num[mask]) - np.log(den[mask]))))


def entropy(joint, A, C=None):
    """``H(A | C)`` by direct summation with 0 log 0 = 0."""
    A, C = _group(A), _group(C)
    if set(A) & set(C):
        raise RejectedInputError("entropy arguments overlap")
    P = _grouped(joint, [A, C])
    pc = np.broadcast_to(P.sum(axis=0, keepdims=True), P.shape)
    mask = P > 0
    return float(-np.sum(P[mask] * (np.log(P[mask]) - np.log(pc[mask]))))


def cond_mutual_information(joint, A, B, C=None):
    """``I(A; B | C)`` in nats; ``A``, ``B`` and ``C`` are disjoint name groups."""
    A, B, C = _group(A), _group(B), _group(C)
    if not A or not B:
        raise RejectedInputError("A and B must be non-empty")
    if set(A) & set(B) or set(A) & set(C) or set(B) & set(C) or len(set(A + B + C)) != len(A + B + C):
        raise RejectedInputError("A, B and C must be disjoint")
    P = _grouped(joint, [A, B, C])
    pac = np.broadcast_to(P.sum(axis=1, keepdims=True), P.shape)
    pbc = np.broadcast_to(P.sum(axis=0, keepdims=True), P.shape)
    pc = np.broadcast_to(P.sum(axis=(0, 1), keepdims=True), P.shape)
    return _xlogx_ratio(P, pc, pac * pbc)


def mutual_information(joint, A, B):
    return cond_mutual_information(joint, A, B, None)


# -- context lift ---------------------------------------------------------

def n_count_vectors(n, k):
    return math.comb(n + k - 1, k - 1)


def count_vectors(n, k):
    """All length-``k`` nonnegative integer vectors summing to ``n``."""
    out = []
    for bars in itertools.combinations(range(n + k - 1), k - 1):
        prev = -1
        counts = []
        for b in bars:
            counts.append(b - prev - 1)
            prev = b
        counts.append(n + k - 2 - prev)
        out.append(tuple(counts))
    return out


def multinomial_logpmf(counts, n, p):
    """Log multinomial pmf for each row of ``counts`` under every row of ``p``.

    Returns an array ``(len(p), len(counts))``; impossible outcomes are -inf.
    """
    counts = np.asarray(counts, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    coef = math.lgamma(n + 1) - np.sum([[math.lgamma(c + 1) for c in row] for row in counts], axis=1)
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    # 0 * log 0 = 0 for absent symbols, -inf where a zero-probability symbol occurs
    safe = np.where(counts[None, :, :] > 0, logp[:, None, :], 0.0)
    return coef[None, :] + (counts[None, :, :] * safe).sum(axis=2)


def lift_context(dgp: DiscreteDGP, n, limit=LIFT_LIMIT):
    """Joint over ``(E, X, Y, S)`` with ``S`` the count vector of ``n`` extra draws."""
    if n < 1:
        raise RejectedInputError("context size n must be at least 1")
    k = len(dgp.X)
    card = n_count_vectors(n, k)
    if card > limit:
        raise CapacityError(f"{card} count vectors exceed the limit {limit}", cardinality=card)
    cvs = count_vectors(n, k)
    ps = np.exp(multinomial_logpmf(cvs, n, dgp.p_X_given_E))
    base = dgp.base_joint().p
    p = base[:, :, :, None] * ps[:, None, None, :]
    return Joint(p, ("E", "X", "Y", "S"), {"E": dgp.E, "X": dgp.X, "Y": dgp.Y, "S": cvs})


def lift_ordered(dgp: DiscreteDGP, n, limit=LIFT_LIMIT):
    """Same as :func:`lift_context` but with ``S`` the ordered tuple of draws."""
    k = len(dgp.X)
    if k ** n > limit:
        raise CapacityError(f"{k ** n} ordered tuples exceed the limit {limit}", cardinality=k ** n)
    tuples = list(itertools.product(range(k), repeat=n))
    ps = np.ones((len(dgp.E), len(tuples)))
    for j, t in enumerate(tuples):
        for xi in t:
            ps[:, j] *= dgp.p_X_given_E[:, xi]
    base = dgp.base_joint().p
    return Joint(base[:, :, :, None] * ps[:, None, None, :], ("E", "X", "Y", "S"),
                 {"E": dgp.E, "X": dgp.X, "Y": dgp.Y, "S": tuples})


# -- verification ---------------------------------------------------------

@dataclass
class TheoremReport:
    n: int
    I_SY_given_X: float
    I_ES_given_X: float
    I_YE_given_X: float
    I_YX: float
    H_E_given_S: float
    criteria: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(c["holds"] for c in self.checks.values() if c.get("applicable", True))

    def to_dict(self):
        d = asdict(self)
        d["ok"] = self.ok
        d["bits"] = {k: to_bits(getattr(self, k)) for k in
                     ("I_SY_given_X", "I_ES_given_X", "I_YE_given_X", "I_YX", "H_E_given_S")}
        return d


def verify_theorem(dgp: DiscreteDGP, n, eps=1e-9, eps_prime=1e-9, delta=0.0, tol=1e-9):
    """Compute the criterion quantities and test the implications between them.

    (a) ``I(E;S|X) <= eps`` implies ``I(Y;S|X) <= eps_prime``.
    (b) ``I(Y;E|X) <= eps`` implies ``I(Y;S|X) <= eps_prime``.
    (c) ``H(E|S) <= eps`` and ``I(Y;E|X) > delta`` imply ``I(Y;S|X) > 1e-6``.
    Data processing: ``I(Y;S|X)`` is bounded by ``I(Y;E|X)`` and by ``I(E;S|X)``.
    """
    J = lift_context(dgp, n)
    i_sy = cond_mutual_information(J, "Y", "S", "X")
    i_es = cond_mutual_information(J, "E", "S", "X")
    i_ye = cond_mutual_information(J, "Y", "E", "X")
    i_yx = mutual_information(J, "Y", "X")
    h_es = entropy(J, "E", "S")
    chain = cond_mutual_information(J, "Y", ["S", "X"]) - (i_sy + i_yx)
    checks = {
        "a": {"applicable": i_es <= eps, "holds": not (i_es <= eps) or i_sy <= eps_prime},
        "b": {"applicable": i_ye <= eps, "holds": not (i_ye <= eps) or i_sy <= eps_prime},
        "c": {"applicable": h_es <= eps and i_ye > delta,
              "holds": not (h_es <= eps and i_ye > delta) or i_sy > SATISFIED},
        "dpi_YE": {"holds": i_sy <= i_ye + tol},
        "dpi_ES": {"holds": i_sy <= i_es + tol},
        "chain_rule": {"holds": abs(chain) <= 1e-10, "residual": chain},
    }
    crit = {"1": criterion_status(i_sy), "2": criterion_status(i_es), "3": criterion_status(i_ye)}
    return TheoremReport(n, i_sy, i_es, i_ye, i_yx, h_es, crit, checks)


def verify_counterexample(dgp: DiscreteDGP, n, tol=1e-9, floor=0.01):
    """Check that context informs E but not Y although E informs Y."""
    J = lift_context(dgp, n)
    vals = {"I_SY_given_X": cond_mutual_information(J, "Y", "S", "X"),
            "I_ES_given_X": cond_mutual_information(J, "E", "S", "X"),
            "I_YE_given_X": cond_mutual_information(J, "Y", "E", "X")}
    ok = vals["I_SY_given_X"] <= tol and vals["I_ES_given_X"] >= floor \
        and vals["I_YE_given_X"] >= floor
    if not ok:
        raise VerificationFailedError(f"counterexample check failed at n={n}: {vals}", vals)
    return dict(vals, n=n, passed=True)


def verify_noisy_recovery(dgp: DiscreteDGP, g, n, tol=1e-9):
    """Noisy recovery ``E = g(S) + Z`` of the environment from the context.

    ``g`` maps a count vector (tuple) to an integer. When both
    ``I(S;Z|X)`` and ``I(S;Z|X,Y)`` vanish, the report asserts
    ``I(Y;S|X) >= I(Y;E|X) - I(Z;Y|X)``.
    """
    if not all(float(e).is_integer() for e in dgp.E):
        raise RejectedInputError("environment support must be integers")
    J = lift_context(dgp, n).derive("Z", lambda e, s: int(e) - int(g(s)), ["E", "S"])
    h1 = cond_mutual_information(J, "S", "Z", "X")
    h2 = cond_mutual_information(J, "S", "Z", ["X", "Y"])
    i_sy = cond_mutual_information(J, "Y", "S", "X")
    i_ye = cond_mutual_information(J, "Y", "E", "X")
    i_zy = cond_mutual_information(J, "Z", "Y", "X")
    rep = {"n": n, "I_SZ_given_X": h1, "I_SZ_given_XY": h2, "I_SY_given_X": i_sy,
           "I_YE_given_X": i_ye, "I_ZY_given_X": i_zy}
    if h1 > tol or h2 > tol:
        rep["status"] = "hypotheses not satisfied"
        return rep
    holds = i_sy >= i_ye - i_zy - tol
    rep["status"] = "passed" if holds else "failed"
    return rep


def verify_sum_mi_inequality(joint: Joint, tol=1e-9, indep_tol=1e-12):
    """``I(A+B; C) <= I(A; C) + I(B; C)`` for ``A`` independent of ``B`` (also given ``C``).

    ``joint`` must have axes ``A``, ``B``, ``C`` with integer supports for
    ``A`` and ``B``.
    """
    for name in ("A", "B", "C"):
        joint.axis(name)
    if cond_mutual_information(joint, "A", "B") > indep_tol or \
            cond_mutual_information(joint, "A", "B", "C") > indep_tol:
        raise RejectedInputError("A and B must be independent, marginally and given C")
    J = joint.derive("A+B", lambda a, b: a + b, ["A", "B"])
    lhs = mutual_information(J, "A+B", "C")
    rhs = mutual_information(J, "A", "C") + mutual_information(J, "B", "C")
    return lhs <= rhs + tol


# -- builtin and random processes -----------------------------------------

def _dirichlet(rng, shape, alpha=1.0, sparsity=0.0):
    g = rng.gamma(alpha, size=shape)
    if sparsity > 0:
        g = np.where(rng.random(shape) < sparsity, 0.0, g)
        empty = g.sum(axis=-1) == 0
        g[empty, 0] = 1.0
    return g / g.sum(axis=-1, keepdims=True)


def random_dgp(rng, n_e=3, n_x=4, n_y=2, sparsity=0.3):
    """Random process with Dirichlet tables; some entries zeroed for sharper structure."""
    return DiscreteDGP(list(range(n_e)), list(range(n_x)), list(range(n_y)), _dirichlet(rng, (n_e,)),
                       _dirichlet(rng, (n_e, n_x), sparsity=sparsity),
                       _dirichlet(rng, (n_e, n_x, n_y), sparsity=sparsity))


def random_recoverable_dgp(rng, n_e=2, n_shared=1, max_shared=0.3):
    """Each environment has a private input symbol plus shared ones.

    A context of about twenty draws then reveals E up to a vanishing
    probability, and Y depends on E at the shared symbols.
    """
    n_x = n_e + n_shared
    p_x = np.zeros((n_e, n_x))
    for e in range(n_e):
        shared = rng.uniform(0.05, max_shared)
        p_x[e, e] = 1.0 - shared
        p_x[e, n_e:] = shared * _dirichlet(rng, (n_shared,))
    # P(Y=1) at shared symbols is low in env 0 and high elsewhere
    q = np.where(np.arange(n_e)[:, None] == 0, rng.uniform(0.0, 0.1, (n_e, n_shared)),
                 rng.uniform(0.6, 1.0, (n_e, n_shared)))
    p_y = np.zeros((n_e, n_x, 2))
    p_y[:, :n_e, 0] = 1.0
    p_y[:, n_e:, 1] = q
    p_y[:, n_e:, 0] = 1.0 - q
    return DiscreteDGP(list(range(n_e)), list(range(n_x)), [0, 1], _dirichlet(rng, (n_e,), 5.0),
                       p_x, p_y)


def builtin_dgp(name):
    """Named reference processes used by the CLI and the tests."""
    if name == "counterexample":
        from .datagen import counterexample_dgp
        return counterexample_dgp()
    if name == "counterexample-disjoint":
        from .datagen import counterexample_dgp
        return counterexample_dgp(shift=2.0, bins=8)
    if name == "covariate-shift":
        p_y = np.array([[0.9, 0.1], [0.4, 0.6], [0.2, 0.8]])
        return DiscreteDGP([0, 1], [0, 1, 2], [0, 1], [0.5, 0.5],
                           [[0.6, 0.3, 0.1], [0.1, 0.3, 0.6]], np.stack([p_y, p_y]))
    if name == "bijective":
        return DiscreteDGP([0, 1, 2], [0, 1, 2], [0, 1], [0.3, 0.3, 0.4], np.eye(3),
                           [[[0.9, 0.1]] * 3, [[0.5, 0.5]] * 3, [[0.2, 0.8]] * 3])
    if name == "label-equals-env":
        return DiscreteDGP([0, 1], [0, 1], [0, 1], [0.5, 0.5], [[0.75, 0.25], [0.25, 0.75]],
                           [[[1.0, 0.0]] * 2, [[0.0, 1.0]] * 2])
    if name == "recoverable":
        return DiscreteDGP([0, 1], [0, 1, 2], [0, 1], [0.5, 0.5],
                           [[0.7, 0.3, 0.0], [0.0, 0.3, 0.7]],
                           [[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]],
                            [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]])
    raise RejectedInputError(f"unknown builtin DGP {name!r}")


BUILTINS = ("counterexample", "counterexample-disjoint", "covariate-shift", "bijective",
            "label-equals-env", "recoverable")
