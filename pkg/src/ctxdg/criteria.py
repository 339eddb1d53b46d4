"""Leave-one-environment-out evaluation of the three criteria.

Per seed the data are split, five models are trained and four relative
improvements are reported:

``R_I``      context model vs baseline on the ID test split
``R_I_ood``  the same pair on the held-out environment
``R_II``     contextual vs plain environment classifier (accuracy)
``R_III``    environment-oracle vs baseline on the ID test split

Metrics are oriented so that larger is better (accuracy, or negative mean
squared error) and the ratio divides by ``|m_base|``, so ``R > 0`` always
means improvement.
"""
from __future__ import annotations

import copy
import csv
import io
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .datagen import SplitSpec, split, standardize
from .errors import CtxdgError, RejectedInputError, UndefinedRatioError
from .modelzoo import build
from .trainer import TrainConfig, evaluate, train

RATIOS = ("R_I", "R_I_ood", "R_II", "R_III")
Y_ROLES = ("Y_given_X_S", "Y_given_X", "Y_given_X_E")
E_ROLES = ("E_given_X_S", "E_given_X")


def relative_improvement(m_new, m_base):
    """``(m_new - m_base) / |m_base|``.

    >>> round(relative_improvement(0.9, 0.75), 12)
    0.2
    >>> round(relative_improvement(-1.8, -2.0), 12)
    0.1
    """
    if m_base == 0:
        raise UndefinedRatioError("relative improvement is undefined for m_base = 0")
    return (m_new - m_base) / abs(m_base)


def signed_ratio(m_new, m_base):
    """The plain ratio ``(m_new - m_base) / m_base``, kept as an auxiliary column."""
    if m_base == 0:
        raise UndefinedRatioError("relative improvement is undefined for m_base = 0")
    return (m_new - m_base) / m_base


def _merge(base, override):
    out = copy.deepcopy(base)
    out.update(copy.deepcopy(override or {}))
    return out


def role_settings(cfg, role, seed):
    """Model and training settings for one role, with seeds derived from ``seed``."""
    mcfg = _merge(cfg.get("model", {}), cfg.get("models", {}).get(role))
    tcfg = _merge(cfg.get("train", {}), cfg.get("trains", {}).get(role))
    tcfg.setdefault("set_size", int(cfg.get("set_size", 32)))
    mcfg["seed"] = int(seed)
    tcfg["seed"] = int(seed)
    return mcfg, TrainConfig.from_dict(tcfg)


def prepare_splits(data, cfg, seed, holdout_env):
    spec = SplitSpec(tuple(cfg.get("fractions", (0.8, 0.1, 0.1))), int(seed), holdout_env)
    parts = split(data, spec)
    if cfg.get("standardize"):
        parts, _ = standardize(parts, cfg.get("standardize_columns"))
    return parts


def fit_role(role, parts, cfg, seed):
    train_set = parts["train"]
    mcfg, tcfg = role_settings(cfg, role, seed)
    dims = {"d_x": train_set.d_x, "d_y": train_set.n_outputs, "task": train_set.task,
            "envs": train_set.envs}
    model = build(role, dims, mcfg)
    report = train(model, train_set, tcfg, val=parts["val"])
    return model, report, tcfg


@dataclass
class CriteriaReport:
    holdout_env: Optional[int]
    metric: str
    set_size: int
    seeds: list
    per_seed: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def mean(self, key):
        return self.aggregate[key]["mean"]

    def csv_rows(self):
        rows = []
        for rec in self.per_seed:
            for k, v in rec.items():
                if k != "seed":
                    rows.append({"holdout_env": self.holdout_env, "seed": rec["seed"],
                                 "metric": k, "value": v})
        return rows

    def to_csv(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["holdout_env", "seed", "metric", "value"], lineterminator="\n")
        w.writeheader()
        for row in self.csv_rows():
            w.writerow({**row, "value": "" if row["value"] is None else repr(row["value"])})
        return buf.getvalue()


def aggregate(per_seed, keys):
    out = {}
    for k in keys:
        vals = [r[k] for r in per_seed if r.get(k) is not None]
        if not vals:
            out[k] = {"mean": None, "std": None, "n": 0}
            continue
        arr = np.array(vals, dtype=np.float64)
        std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        out[k] = {"mean": float(arr.mean()), "std": std, "n": len(arr)}
    return out


def run_seed(data, holdout_env, cfg, seed):
    """Train the five models on one split and return raw metrics and ratios."""
    parts = prepare_splits(data, cfg, seed, holdout_env)
    n_train_envs = len(parts["train"].envs)
    if holdout_env is not None and n_train_envs < 2:
        raise RejectedInputError("at least two training environments must remain")
    n = int(cfg.get("set_size", 32))
    eval_seed = int(cfg.get("eval_seed", 0)) + 1000 * int(seed)
    test, ood = parts["test"], parts["ood"]
    rec = {"seed": int(seed)}
    try:
        for role in Y_ROLES + E_ROLES:
            model, report, _ = fit_role(role, parts, cfg, seed)
            key = "M_" + role
            rec[key] = evaluate(model, test, set_size=n, seed=eval_seed)
            rec[f"best_iter_{role}"] = report.best_iteration
            if role in ("Y_given_X_S", "Y_given_X"):
                rec[key + "_ood"] = None if ood is None else evaluate(
                    model, ood, set_size=n, seed=eval_seed + 1)
    except CtxdgError as exc:
        exc.args = (f"seed {seed}: {exc.args[0] if exc.args else exc}",)
        raise
    rec["R_I"] = relative_improvement(rec["M_Y_given_X_S"], rec["M_Y_given_X"])
    rec["R_I_ood"] = None if ood is None else relative_improvement(
        rec["M_Y_given_X_S_ood"], rec["M_Y_given_X_ood"])
    rec["R_II"] = relative_improvement(rec["M_E_given_X_S"], rec["M_E_given_X"])
    rec["R_III"] = relative_improvement(rec["M_Y_given_X_E"], rec["M_Y_given_X"])
    rec["signed_R_I"] = signed_ratio(rec["M_Y_given_X_S"], rec["M_Y_given_X"])
    rec["signed_R_III"] = signed_ratio(rec["M_Y_given_X_E"], rec["M_Y_given_X"])
    return rec


def run_criteria(data, holdout_env, cfg, seeds, jobs=1):
    """Full protocol over ``seeds``; returns a :class:`CriteriaReport`.

    ``holdout_env=None`` trains on every environment and reports no OOD ratio.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise RejectedInputError("at least one seed is required")
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            per_seed = list(pool.map(lambda s: run_seed(data, holdout_env, cfg, s), seeds))
    else:
        per_seed = [run_seed(data, holdout_env, cfg, s) for s in seeds]
    keys = [k for k in per_seed[0] if k != "seed"]
    metric = "accuracy" if data.task == "classification" else "neg_l2"
    return CriteriaReport(holdout_env, metric, int(cfg.get("set_size", 32)), seeds,
                          per_seed, aggregate(per_seed, keys))


@dataclass
class SetSizeChoice:
    n: int
    warned: bool
    accuracies: dict


def choose_set_size(data, candidate_ns, cfg, seed=0, threshold=0.99):
    """Smallest ``n`` whose contextual environment classifier reaches ``threshold``.

    Falls back to the largest candidate with a warning.
    """
    cands = sorted(int(n) for n in candidate_ns)
    if not cands:
        raise RejectedInputError("candidate set sizes must be non-empty")
    parts = prepare_splits(data, cfg, seed, cfg.get("holdout_env"))
    accs = {}
    for n in cands:
        local = dict(cfg, set_size=n)
        model, _, _ = fit_role("E_given_X_S", parts, local, seed)
        accs[n] = evaluate(model, parts["test"], set_size=n, seed=seed)
        if accs[n] >= threshold:
            return SetSizeChoice(n, False, accs)
    warnings.warn(f"no set size reached accuracy {threshold}; using {cands[-1]}")
    return SetSizeChoice(cands[-1], True, accs)
