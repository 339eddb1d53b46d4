"""Experiment drivers shared by the CLI and the acceptance tests.

Each driver takes a plain config mapping and a seed and returns JSON-ready
dicts; nothing here touches the filesystem except dataset loading.
"""
from __future__ import annotations

import copy
import os
from dataclasses import replace

import numpy as np

from . import oodselect as od
from .criteria import fit_role, prepare_splits
from .datagen import (SimpsonSettings, gen_colored_tabular, gen_counterexample, gen_simpson,
                      load_bike_sharing, read_csv)
from .errors import ConfigurationError
from .trainer import ContextPool, evaluate


def resolve(path, base_dir):
    if path is None or os.path.isabs(path) or base_dir is None:
        return path
    return os.path.normpath(os.path.join(base_dir, path))


def make_dataset(spec, base_dir=None, sizes=None):
    """Build or load the dataset described by ``spec``.

    ``kind`` is one of simpson, colored, counterexample, bike or csv.
    """
    spec = dict(spec)
    kind = spec.get("kind")
    seed = int(spec.get("seed", 0))
    if kind == "simpson":
        settings = dict(spec.get("settings", {}))
        if sizes is not None:
            settings["n_samples"] = int(sizes)
        return gen_simpson(SimpsonSettings(**settings), seed)
    if kind == "colored":
        return gen_colored_tabular(spec.get("assoc", (0.9, 0.8, 0.1)),
                                   float(spec.get("label_noise", 0.25)),
                                   sizes if sizes is not None else spec.get("size", 10000), seed)
    if kind == "counterexample":
        return gen_counterexample(sizes if sizes is not None else spec.get("size", 10000), seed,
                                  float(spec.get("a", 0.0)), float(spec.get("b", 2.0)),
                                  tuple(spec.get("c", (0.0, 1.0, 0.5))), spec.get("shift"))
    if kind == "bike":
        return load_bike_sharing(resolve(spec["path"], base_dir))
    if kind == "csv":
        return read_csv(resolve(spec["path"], base_dir), spec.get("task", "regression"))
    raise ConfigurationError(f"unknown dataset kind {kind!r}")


def _summarizer(model):
    return model.summarize


def _singleton(model):
    return lambda x: model.penultimate(x)


def _row_contexts(data, set_size, seed, pool=None):
    """One context set per row of ``data`` drawn from its environment in ``pool``."""
    src = data if pool is None else pool
    cp = ContextPool(src.x, src.env)
    rng = np.random.default_rng([seed, 19])
    rows = cp.rows(data.env, set_size, rng.random((len(data), set_size)))
    return cp.x, rows


def _selection_accuracy(det, summaries, data, pred_id, pred_ood):
    flags = od.novel_mask(det, summaries)
    pred = np.where(flags[:, None], pred_ood, pred_id)
    acc = float(np.mean(np.argmax(pred, axis=1) == data.y))
    return acc, float(flags.mean())


def colored_selection(cfg, seed):
    """Baseline, invariant and the two selection policies on the colored analog.

    Returns one row per method with ID and OOD accuracy plus novel rates.
    """
    data = make_dataset(cfg["dataset"])
    holdout = int(cfg.get("holdout_env", 2))
    parts = prepare_splits(data, cfg["criteria"], seed, holdout)
    crit = cfg["criteria"]
    n = int(crit.get("set_size", 1024))
    det_cfg = dict(cfg.get("detector", {}))
    k, q = int(det_cfg.get("k_neighbors", 5)), float(det_cfg.get("q", 0.95))
    per_env = int(det_cfg.get("reference_sets", 200))
    test, ood = parts["test"], parts["ood"]

    base, _, _ = fit_role("Y_given_X", parts, crit, seed)
    inv_parts = dict(parts)
    inv_parts["train"] = decorrelate(parts["train"], int(cfg.get("color_column", 1)), seed)
    inv_cfg = copy.deepcopy(crit)
    inv_cfg.setdefault("models", {}).setdefault("invariant", {})
    inv_cfg["models"]["invariant"].setdefault("mask", cfg.get("invariant_mask", [0]))
    inv, _, _ = fit_role("invariant", inv_parts, inv_cfg, seed)
    enc_role = det_cfg.get("encoder_role", "E_given_X_S")
    enc_model, _, _ = fit_role(enc_role, parts, crit, seed)

    rows = {}
    for name, model in (("Baseline", base), ("Invariant", inv)):
        rows[name] = {"id": evaluate(model, test), "ood": evaluate(model, ood)}

    summ = _summarizer(enc_model)
    ref, _ = od.sample_summaries(summ, parts["train"], per_env, n, 100 * seed + 1)
    val, _ = od.sample_summaries(summ, parts["val"], per_env, n, 100 * seed + 2)
    det = od.fit_detector(ref, val, k, q)
    preds = {name: (base.predict(d.x), inv.predict(d.x)) for name, d in (("id", test), ("ood", ood))}
    ours = {}
    for name, d, s in (("id", test, 100 * seed + 3), ("ood", ood, 100 * seed + 4)):
        px, rows_idx = _row_contexts(d, n, s)
        sums = np.concatenate([summ(px[rows_idx[lo:lo + 128]]) for lo in range(0, len(d), 128)])
        acc, rate = _selection_accuracy(det, sums, d, *preds[name])
        ours[name], ours[name + "_novel_rate"] = acc, rate
    rows["Selection (Ours)"] = ours

    # singleton detector on the baseline's penultimate features
    feat = _singleton(base)
    rng = np.random.default_rng([seed, 23])
    tr = parts["train"]
    ref_rows = np.concatenate([rng.choice(tr.env_rows(e), per_env, replace=len(tr.env_rows(e)) < per_env)
                               for e in tr.envs])
    det_single = od.fit_detector(feat(tr.x[ref_rows]), feat(parts["val"].x), k, q)
    single = {}
    for name, d in (("id", test), ("ood", ood)):
        acc, rate = _selection_accuracy(det_single, feat(d.x), d, *preds[name])
        single[name], single[name + "_novel_rate"] = acc, rate
    rows["Selection (Baseline)"] = single
    return {"seed": int(seed), "rows": rows, "threshold": det.threshold,
            "threshold_singleton": det_single.threshold}


def decorrelate(data, column, seed):
    """Copy of ``data`` with ``column`` permuted across all rows, breaking its label association."""
    x = data.x.copy()
    x[:, column] = x[np.random.default_rng([seed, 29]).permutation(len(x)), column]
    return replace(data, x=x)


def bike_detection(cfg, seed, base_dir=None):
    """Winter holdout: ID/OOD error of both predictors and both detectors' AUROC."""
    data = make_dataset(cfg["dataset"], base_dir)
    holdout = int(cfg.get("holdout_env", 3))
    crit = cfg["criteria"]
    parts = prepare_splits(data, crit, seed, holdout)
    n = int(crit.get("set_size", 64))
    det_cfg = dict(cfg.get("detector", {}))
    k, q = int(det_cfg.get("k_neighbors", 5)), float(det_cfg.get("q", 0.95))
    per_env = int(det_cfg.get("reference_sets", 200))
    eval_seed = 1000 * int(seed)
    out = {"seed": int(seed)}
    models = {}
    for role in ("Y_given_X_S", "Y_given_X"):
        m, _, _ = fit_role(role, parts, crit, seed)
        models[role] = m
        out[f"mse_id_{role}"] = -evaluate(m, parts["test"], set_size=n, seed=eval_seed)
        out[f"mse_ood_{role}"] = -evaluate(m, parts["ood"], set_size=n, seed=eval_seed + 1)
    enc_role = det_cfg.get("encoder_role", "Y_given_X_S")
    enc = models.get(enc_role) or fit_role(enc_role, parts, crit, seed)[0]
    summ = _summarizer(enc)
    ref, _ = od.sample_summaries(summ, parts["train"], per_env, n, 100 * seed + 1)
    val, _ = od.sample_summaries(summ, parts["val"], per_env, n, 100 * seed + 2)
    det = od.fit_detector(ref, val, k, q)
    id_s, _ = od.sample_summaries(summ, parts["test"], per_env, n, 100 * seed + 3)
    ood_s, _ = od.sample_summaries(summ, parts["ood"], per_env * len(parts["test"].envs), n,
                                   100 * seed + 4)
    out["auroc_set"] = od.auroc(od.scores(det, id_s), od.scores(det, ood_s))
    out["novel_rate_id_set"] = float(od.novel_mask(det, id_s).mean())
    out["novel_rate_ood_set"] = float(od.novel_mask(det, ood_s).mean())

    feat = _singleton(models["Y_given_X"])
    rng = np.random.default_rng([seed, 23])
    tr = parts["train"]
    ref_rows = np.concatenate([rng.choice(tr.env_rows(e), per_env, replace=False) for e in tr.envs])
    det1 = od.fit_detector(feat(tr.x[ref_rows]), feat(parts["val"].x), k, q)
    out["auroc_singleton"] = od.auroc(od.scores(det1, feat(parts["test"].x)),
                                      od.scores(det1, feat(parts["ood"].x)))
    out["novel_rate_ood_singleton"] = float(od.novel_mask(det1, feat(parts["ood"].x)).mean())
    return out


def sweep(cfg, seeds):
    """Environment-classification accuracy over a grid of spacings and set sizes.

    The baseline does not depend on ``n`` and is trained once per
    (spacing, seed); every cell reuses the same data for a given seed.
    """
    grid = cfg["grid"]
    crit = cfg["criteria"]
    base_settings = dict(cfg["dataset"].get("settings", {}))
    rows = []
    for spacing in grid["spacings"]:
        for seed in seeds:
            settings = SimpsonSettings(**dict(base_settings, spacing=float(spacing)))
            data = gen_simpson(settings, int(cfg["dataset"].get("seed", 0)) + int(seed))
            parts = prepare_splits(data, crit, seed, None)
            base, _, _ = fit_role("E_given_X", parts, crit, seed)
            acc_base = evaluate(base, parts["test"], seed=seed)
            for n in grid["set_sizes"]:
                local = dict(crit, set_size=int(n))
                model, _, _ = fit_role("E_given_X_S", parts, local, seed)
                acc = evaluate(model, parts["test"], set_size=int(n), seed=seed)
                rows.append({"spacing": float(spacing), "n": int(n), "seed": int(seed),
                             "model": "E_given_X_S", "accuracy": acc})
                rows.append({"spacing": float(spacing), "n": int(n), "seed": int(seed),
                             "model": "E_given_X", "accuracy": acc_base})
    return rows


def sweep_means(rows, model="E_given_X_S"):
    """Seed-averaged accuracy keyed by (spacing, n)."""
    acc = {}
    for r in rows:
        if r["model"] == model:
            acc.setdefault((r["spacing"], r["n"]), []).append(r["accuracy"])
    return {k: float(np.mean(v)) for k, v in acc.items()}


def train_single(cfg, seed, base_dir=None):
    """Train one role as configured and return the model and its metrics."""
    data = make_dataset(cfg["dataset"], base_dir)
    crit = cfg["criteria"]
    role = cfg.get("role", "Y_given_X_S")
    holdout = cfg.get("holdout_env")
    if holdout in (None, "all", "none"):
        holdout = None
    parts = prepare_splits(data, crit, seed, None if holdout is None else int(holdout))
    model, report, tcfg = fit_role(role, parts, crit, seed)
    n = tcfg.set_size
    metrics = {"test": evaluate(model, parts["test"], set_size=n, seed=1000 * seed)}
    if parts["ood"] is not None and not role.startswith("E_") and role != "Y_given_X_E":
        metrics["ood"] = evaluate(model, parts["ood"], set_size=n, seed=1000 * seed + 1)
    return model, report, metrics
