"""Synthetic generators, the hourly bike-rental loader, splits and CSV I/O."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError, IngestionError, RejectedInputError
from .infotheory import DiscreteDGP


@dataclass
class EnvironmentDataset:
    """Labeled rows grouped by environment.

    ``y`` is ``(N, d_y)`` float for regression and ``(N,)`` int for
    classification. ``contexts`` optionally holds one pre-drawn context set
    per row, shape ``(N, n, d_x)``.
    """

    x: np.ndarray
    y: np.ndarray
    env: np.ndarray
    env_names: dict = field(default_factory=dict)
    task: str = "regression"
    contexts: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        self.env = np.asarray(self.env, dtype=np.int64).reshape(-1)
        if self.task == "classification":
            self.y = np.asarray(self.y).reshape(-1).astype(np.int64)
        else:
            y = np.asarray(self.y, dtype=np.float64)
            self.y = y[:, None] if y.ndim == 1 else y
        if not (len(self.x) == len(self.y) == len(self.env)):
            raise RejectedInputError("x, y and env must have the same number of rows")
        if not self.env_names:
            self.env_names = {int(e): f"env_{int(e)}" for e in np.unique(self.env)}
        self.env_names = {int(k): str(v) for k, v in self.env_names.items()}

    def __len__(self):
        return len(self.x)

    @property
    def d_x(self):
        return self.x.shape[1]

    @property
    def d_y(self):
        return 1 if self.task == "classification" else self.y.shape[1]

    @property
    def n_outputs(self):
        """Output width of a target model: class count or regression width."""
        if self.task == "classification":
            return max(int(self.y.max()) + 1, 2) if len(self.y) else 2
        return self.d_y

    @property
    def envs(self):
        return [int(e) for e in np.unique(self.env)]

    def subset(self, idx):
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(np.int64)
        ctx = None if self.contexts is None else self.contexts[idx]
        return replace(self, x=self.x[idx], y=self.y[idx], env=self.env[idx], contexts=ctx)

    def env_rows(self, e):
        return np.nonzero(self.env == e)[0]


# -- Simpson mixture ------------------------------------------------------

@dataclass
class SimpsonSettings:
    n_domains: int = 5
    n_samples: int = 10000
    spacing: float = 2.0
    noise: float = 0.25
    noise_ratio: float = 6.0
    rotation_range: tuple = (45.0, 45.0)

    def __post_init__(self):
        self.rotation_range = tuple(float(r) for r in self.rotation_range)
        if self.n_domains < 2:
            raise ConfigurationError("n_domains must be at least 2")
        if self.n_samples < 1:
            raise ConfigurationError("n_samples must be positive")
        # spacing 0 is allowed: it gives identical environments for the sweep
        if self.spacing < 0:
            raise ConfigurationError("spacing must be non-negative")
        if not self.noise > 0:
            raise ConfigurationError("noise must be positive")
        if self.noise_ratio < 1:
            raise ConfigurationError("noise_ratio must be at least 1")

    def component_std(self):
        """Standard deviations along the principal and secondary axes.

        The principal axis is ``noise * noise_ratio`` wide and the secondary
        axis ``noise`` wide, both read as full widths (two standard
        deviations).
        """
        return self.noise * self.noise_ratio / 2.0, self.noise / 2.0

    def means(self):
        i = np.arange(self.n_domains, dtype=np.float64)
        return i[:, None] * self.spacing * np.array([1.0, -1.0]) / math.sqrt(2.0)

    def angles(self):
        lo, hi = self.rotation_range
        return np.linspace(lo, hi, self.n_domains)

    def covariances(self):
        sp, ss = self.component_std()
        out = []
        for theta in np.deg2rad(self.angles()):
            R = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
            out.append(R @ np.diag([sp ** 2, ss ** 2]) @ R.T)
        return np.array(out)


def gen_simpson(s: SimpsonSettings = None, seed=0):
    """Gaussian mixture whose within-component trend opposes the global one.

    Component ``i`` has mean ``i * spacing * (1, -1) / sqrt(2)``; its long
    axis is rotated by an angle interpolated over ``rotation_range``. The
    first coordinate is the input and the second the target.
    """
    s = s or SimpsonSettings()
    rng = np.random.default_rng(seed)
    sp, ss = s.component_std()
    means = s.means()
    xs, ys, envs = [], [], []
    for i, theta in enumerate(np.deg2rad(s.angles())):
        z = rng.standard_normal((s.n_samples, 2))
        # rotate (sp * z0, ss * z1) by theta
        a, b = sp * z[:, 0], ss * z[:, 1]
        pts = np.stack([a * math.cos(theta) - b * math.sin(theta),
                        a * math.sin(theta) + b * math.cos(theta)], axis=1) + means[i]
        xs.append(pts[:, :1])
        ys.append(pts[:, 1:])
        envs.append(np.full(s.n_samples, i))
    names = {i: f"domain_{i}" for i in range(s.n_domains)}
    return EnvironmentDataset(np.concatenate(xs), np.concatenate(ys), np.concatenate(envs), names)


# -- colored analog -------------------------------------------------------

def gen_colored_tabular(assoc=(0.9, 0.8, 0.1), label_noise=0.25, size=10000, seed=0):
    """Two binary features per row: a shape bit and a color bit.

    ``P(shape = y) = 1 - label_noise`` in every environment while
    ``P(color = y) = assoc[env]`` varies.
    """
    assoc = [float(a) for a in assoc]
    if any(not 0 <= a <= 1 for a in assoc) or not 0 <= label_noise <= 1:
        raise ConfigurationError("association probabilities must lie in [0, 1]")
    sizes = [int(size)] * len(assoc) if np.ndim(size) == 0 else [int(v) for v in size]
    rng = np.random.default_rng(seed)
    xs, ys, envs = [], [], []
    for e, (a, m) in enumerate(zip(assoc, sizes)):
        y = rng.integers(0, 2, m)
        shape = np.where(rng.random(m) < 1.0 - label_noise, y, 1 - y)
        color = np.where(rng.random(m) < a, y, 1 - y)
        xs.append(np.stack([shape, color], axis=1).astype(np.float64))
        ys.append(y)
        envs.append(np.full(m, e))
    names = {e: f"assoc_{a:g}" for e, a in enumerate(assoc)}
    return EnvironmentDataset(np.concatenate(xs), np.concatenate(ys), np.concatenate(envs),
                              names, task="classification")


def colored_bayes_accuracy(assoc, label_noise, train_envs=None):
    """Bayes accuracy per environment of the rule fit on pooled ``train_envs``."""
    assoc = list(assoc)
    train_envs = list(range(len(assoc))) if train_envs is None else list(train_envs)
    rho = 1.0 - label_noise
    rule = {}
    for s in (0, 1):
        for c in (0, 1):
            score = 0.0
            for e in train_envs:
                a = assoc[e]
                # P(y=1, s, c) - P(y=0, s, c)
                p1 = (rho if s == 1 else 1 - rho) * (a if c == 1 else 1 - a)
                p0 = (rho if s == 0 else 1 - rho) * (a if c == 0 else 1 - a)
                score += p1 - p0
            rule[s, c] = 1 if score > 0 else 0
    acc = []
    for a in assoc:
        total = 0.0
        for y in (0, 1):
            for s in (0, 1):
                for c in (0, 1):
                    p = 0.5 * (rho if s == y else 1 - rho) * (a if c == y else 1 - a)
                    total += p * (rule[s, c] == y)
        acc.append(total)
    return acc


# -- counterexample -------------------------------------------------------

def counterexample_y(x, env, a=0.0, b=2.0, c=(0.0, 1.0, 0.5)):
    mid = (a + b) / 2.0
    x = np.asarray(x, dtype=np.float64)
    env = np.asarray(env)
    out = np.full(x.shape, c[2], dtype=np.float64)
    low = x <= mid
    out[low & (env == 0)] = c[0]
    out[low & (env == 1)] = c[1]
    return out


def gen_counterexample(size=10000, seed=0, a=0.0, b=2.0, c=(0.0, 1.0, 0.5), shift=None):
    """Three environments where context reveals env but not the target.

    Envs 0 and 1 are uniform on ``[a, b]``; env 2 is uniform on the same
    interval moved right by ``shift`` (default ``(a + b) / 2``). On
    ``x <= (a + b) / 2`` the target is ``c[0]`` in env 0 and ``c[1]`` in env 1;
    everywhere else it is ``c[2]``.
    """
    if not a < b:
        raise ConfigurationError("counterexample needs a < b")
    shift = (a + b) / 2.0 if shift is None else float(shift)
    rng = np.random.default_rng(seed)
    sizes = [int(size)] * 3 if np.ndim(size) == 0 else [int(v) for v in size]
    xs, envs = [], []
    for e, m in enumerate(sizes):
        lo = a + (shift if e == 2 else 0.0)
        xs.append(rng.uniform(lo, lo + (b - a), m))
        envs.append(np.full(m, e))
    x = np.concatenate(xs)
    env = np.concatenate(envs)
    return EnvironmentDataset(x[:, None], counterexample_y(x, env, a, b, c), env,
                              {0: "left_a", 1: "left_b", 2: "shifted"})


def counterexample_dgp(a=0.0, b=2.0, c=(0.0, 1.0, 0.5), bins=6, shift=None):
    """Discretized counterexample: X is the bin index over the joint support.

    ``p(X | E)`` and ``p(Y | X, E)`` are the exact overlap fractions of the
    continuous construction. ``shift = b - a`` with ``bins = 8`` gives the
    variant where env 2's support is disjoint from the others.
    """
    if not a < b:
        raise ConfigurationError("counterexample needs a < b")
    shift = (a + b) / 2.0 if shift is None else float(shift)
    mid = (a + b) / 2.0
    lo_all, hi_all = a, b + shift
    edges = np.linspace(lo_all, hi_all, bins + 1)
    y_vals = sorted(set(float(v) for v in c))
    supports = [(a, b), (a, b), (a + shift, b + shift)]
    p_x = np.zeros((3, bins))
    p_y = np.zeros((3, bins, len(y_vals)))
    for e, (lo, hi) in enumerate(supports):
        for k in range(bins):
            l, r = max(lo, edges[k]), min(hi, edges[k + 1])
            width = max(r - l, 0.0)
            p_x[e, k] = width / (hi - lo)
            if width == 0:
                p_y[e, k, y_vals.index(float(c[2]))] = 1.0
                continue
            below = max(min(r, mid) - l, 0.0) if e < 2 else 0.0
            p_y[e, k, y_vals.index(float(c[e] if e < 2 else c[2]))] += below / width
            p_y[e, k, y_vals.index(float(c[2]))] += (width - below) / width
    return DiscreteDGP(E=[0, 1, 2], X=list(range(bins)), Y=y_vals, p_E=np.full(3, 1 / 3),
                       p_X_given_E=p_x, p_Y_given_XE=p_y)


# -- bike sharing ---------------------------------------------------------

BIKE_FEATURES = ("yr", "mnth", "hr", "holiday", "weekday", "workingday", "weathersit",
                 "temp", "atemp", "hum", "windspeed")
BIKE_REQUIRED = ("season", "cnt") + BIKE_FEATURES
SEASONS = {0: "spring", 1: "summer", 2: "fall", 3: "winter"}


def load_bike_sharing(path):
    """Read the UCI hourly rental file.

    Features are the eleven calendar and weather columns; the target is
    ``sqrt(cnt)`` and the environment is ``season - 1``. Date, record id and
    the casual/registered split are dropped.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IngestionError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in BIKE_REQUIRED:
            if col not in header:
                raise IngestionError(f"{path}: missing column {col!r}")
        xs, ys, envs = [], [], []
        for row_no, row in enumerate(reader, start=2):
            try:
                xs.append([float(row[c]) for c in BIKE_FEATURES])
                cnt = float(row["cnt"])
                season = int(float(row["season"]))
            except (TypeError, ValueError):
                bad = next(c for c in BIKE_REQUIRED if not _is_number(row.get(c)))
                raise IngestionError(
                    f"{path}: row {row_no}: non-numeric value {row.get(bad)!r} in column {bad!r}"
                ) from None
            if not 1 <= season <= 4:
                raise IngestionError(f"{path}: row {row_no}: season {season} outside 1..4")
            if cnt < 0:
                raise IngestionError(f"{path}: row {row_no}: negative count")
            ys.append(math.sqrt(cnt))
            envs.append(season - 1)
    if not xs:
        raise IngestionError(f"{path}: no data rows")
    return EnvironmentDataset(np.array(xs), np.array(ys), np.array(envs), dict(SEASONS))


def _is_number(v):
    try:
        return math.isfinite(float(v))
    except (TypeError, ValueError):
        return False


# -- splits ---------------------------------------------------------------

@dataclass
class SplitSpec:
    fractions: tuple = (0.8, 0.1, 0.1)
    seed: int = 0
    holdout_env: Optional[int] = None

    def __post_init__(self):
        self.fractions = tuple(float(f) for f in self.fractions)
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions):
            raise ConfigurationError("split fractions must be three positive numbers")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigurationError("split fractions must sum to 1")


def split(data: EnvironmentDataset, spec: SplitSpec):
    """Stratified train/val/test partition with an optional held-out environment.

    Returns a dict with keys ``train``, ``val``, ``test`` and ``ood`` (None
    without a holdout). Each retained environment is shuffled with its own
    stream derived from ``spec.seed`` and cut at the rounded fractions.
    """
    envs = data.envs
    if spec.holdout_env is not None and int(spec.holdout_env) not in envs:
        raise RejectedInputError(f"holdout env {spec.holdout_env} not in {envs}")
    parts = {"train": [], "val": [], "test": []}
    for e in envs:
        if spec.holdout_env is not None and e == int(spec.holdout_env):
            continue
        rows = data.env_rows(e)
        rows = rows[np.random.default_rng([spec.seed, e]).permutation(len(rows))]
        n_tr = int(round(spec.fractions[0] * len(rows)))
        n_va = int(round(spec.fractions[1] * len(rows)))
        parts["train"].append(rows[:n_tr])
        parts["val"].append(rows[n_tr:n_tr + n_va])
        parts["test"].append(rows[n_tr + n_va:])
    out = {k: data.subset(np.sort(np.concatenate(v))) for k, v in parts.items()}
    out["ood"] = None if spec.holdout_env is None else data.subset(data.env_rows(int(spec.holdout_env)))
    return out


def standardize(splits, columns=None):
    """Scale features with train-split mean and std; returns new splits and the stats."""
    x = splits["train"].x
    cols = list(range(x.shape[1])) if columns is None else list(columns)
    mu = np.zeros(x.shape[1])
    sd = np.ones(x.shape[1])
    mu[cols] = x[:, cols].mean(axis=0)
    sd[cols] = x[:, cols].std(axis=0)
    sd[sd == 0] = 1.0
    out = {k: None if v is None else replace(v, x=(v.x - mu) / sd) for k, v in splits.items()}
    return out, (mu, sd)


# -- discrete sampling ----------------------------------------------------

def sample_dgp(dgp: DiscreteDGP, size, n, seed=0):
    """Ancestral draws of (E, X, Y) plus ``n`` further X-draws from the same E."""
    rng = np.random.default_rng(seed)
    e_idx = rng.choice(len(dgp.E), size=size, p=dgp.p_E)
    cdf_x = np.cumsum(dgp.p_X_given_E, axis=1)
    cdf_x[:, -1] = 1.0
    x_idx = np.minimum((rng.random(size)[:, None] > cdf_x[e_idx]).sum(axis=1), len(dgp.X) - 1)
    cdf_y = np.cumsum(dgp.p_Y_given_XE, axis=2)
    cdf_y[:, :, -1] = 1.0
    y_idx = (rng.random(size)[:, None] > cdf_y[e_idx, x_idx]).sum(axis=1)
    ctx_idx = (rng.random((size, n))[:, :, None] > cdf_x[e_idx][:, None, :]).sum(axis=2)
    X = np.asarray(dgp.X, dtype=np.float64)
    ds = EnvironmentDataset(X[x_idx][:, None], np.asarray(dgp.Y, dtype=np.float64)[y_idx],
                            np.asarray(dgp.E)[e_idx],
                            {int(e): f"env_{e}" for e in dgp.E})
    ds.contexts = X[np.minimum(ctx_idx, len(dgp.X) - 1)][:, :, None]
    return ds


# -- files ----------------------------------------------------------------

def write_csv(data: EnvironmentDataset, path):
    d_y = data.d_y
    header = [f"x_{j}" for j in range(data.d_x)]
    header += ["y"] if d_y == 1 else [f"y_{j}" for j in range(d_y)]
    header.append("env")
    y = data.y.reshape(len(data), -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for xi, yi, ei in zip(data.x, y, data.env):
            ys = [str(int(v)) for v in yi] if data.task == "classification" else [format(v, ".17g") for v in yi]
            w.writerow([format(v, ".17g") for v in xi] + ys + [str(int(ei))])


def read_csv(path, task="regression", env_names=None):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IngestionError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or "env" not in header:
            raise IngestionError(f"{path}: header must contain x_0.., y and env")
        xcols = [i for i, h in enumerate(header) if h.startswith("x_")]
        ycols = [i for i, h in enumerate(header) if h == "y" or h.startswith("y_")]
        ecol = header.index("env")
        if not xcols or not ycols:
            raise IngestionError(f"{path}: header must contain x_0.., y and env")
        rows = []
        for row_no, row in enumerate(reader, start=2):
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise IngestionError(f"{path}: row {row_no}: non-numeric value") from None
    arr = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    return EnvironmentDataset(arr[:, xcols], arr[:, ycols], arr[:, ecol].astype(np.int64),
                              env_names or {}, task=task)


def load_dgp_json(path_or_doc):
    if isinstance(path_or_doc, dict):
        doc = path_or_doc
    else:
        with open(path_or_doc) as fh:
            doc = json.load(fh)
    return DiscreteDGP.from_dict(doc)
