"""Command-line entry point: ``ctxdg <command> --config <path> [options]``.

Exit codes: 0 success, 1 configuration error, 2 runtime or training error,
3 verification failure. Partial results are written even when a sub-run
fails, together with an ``errors`` manifest.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from . import experiments as ex
from . import infotheory as it
from .criteria import aggregate, run_criteria
from .datagen import counterexample_dgp, write_csv
from .errors import ConfigurationError, CtxdgError, VerificationFailedError
from .modelzoo import save_model

log = logging.getLogger("ctxdg")


def load_config(path):
    if path is None:
        return {}, None
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path} is not valid JSON: {exc}") from exc
    return cfg, os.path.dirname(os.path.abspath(path))


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def parse_seeds(text, cfg):
    if text:
        try:
            seeds = [int(s) for s in text.split(",") if s.strip()]
        except ValueError:
            raise ConfigurationError(f"--seeds must be comma-separated integers, got {text!r}") from None
    else:
        seeds = [int(s) for s in cfg.get("seeds", [0])]
    if not seeds:
        raise ConfigurationError("seed list is empty")
    return seeds


def provenance(cfg, seeds):
    return {"config": cfg, "config_sha256": config_hash(cfg), "seeds": seeds,
            "version": __version__}


def out_path(args, cfg, default):
    path = args.out or cfg.get("out") or default
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    return path


def write_json(path, doc):
    try:
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, default=_jsonable)
            fh.write("\n")
    except OSError as exc:
        raise CtxdgError(f"cannot write {path}: {exc}") from exc


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_rows(path, rows, fields=None):
    if fields is None:
        fields = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def run_cells(cells, fn, jobs):
    """Run ``fn(cell)`` for every cell; returns (results, errors) in cell order."""
    def guarded(cell):
        try:
            return fn(cell), None
        except CtxdgError as exc:
            return None, {"cell": cell, "error": str(exc), "type": type(exc).__name__,
                          "exit_code": exc.exit_code}
        except Exception as exc:  # noqa: BLE001 - recorded in the manifest
            return None, {"cell": cell, "error": str(exc), "type": type(exc).__name__,
                          "exit_code": 2, "traceback": traceback.format_exc()}

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            outs = list(pool.map(guarded, cells))
    else:
        outs = [guarded(c) for c in cells]
    return [o[0] for o in outs], [o[1] for o in outs if o[1] is not None]


def _exit_for(errors):
    return max((e["exit_code"] for e in errors), default=0)


# -- commands -------------------------------------------------------------

def cmd_generate(args, cfg, base_dir):
    spec = dict(cfg.get("dataset", {}))
    if args.kind:
        spec["kind"] = args.kind
    if not spec.get("kind"):
        raise ConfigurationError("dataset kind missing: pass it positionally or in the config")
    if spec["kind"] == "dgp-sample":
        from .datagen import sample_dgp
        dgp = _load_dgp(spec.get("dgp", "counterexample"), base_dir)
        data = sample_dgp(dgp, int(args.sizes or spec.get("size", 1000)), int(spec.get("n", 4)),
                          int(spec.get("seed", 0)))
    else:
        data = ex.make_dataset(spec, base_dir, sizes=args.sizes)
    path = out_path(args, cfg, f"{spec['kind']}.csv")
    try:
        write_csv(data, path)
    except OSError as exc:
        raise CtxdgError(f"cannot write {path}: {exc}") from exc
    log.info("wrote %d rows to %s", len(data), path)
    return 0


def cmd_train(args, cfg, base_dir):
    seeds = parse_seeds(args.seeds, cfg)
    path = out_path(args, cfg, "model.json")
    stem = os.path.splitext(path)[0]
    if args.holdout_env is not None:
        cfg = dict(cfg, holdout_env=_holdout_arg(args.holdout_env))
    report = provenance(cfg, seeds)
    runs = []
    for seed in seeds:
        model, trep, metrics = ex.train_single(cfg, seed, base_dir)
        target = path if len(seeds) == 1 else f"{stem}.seed{seed}.json"
        save_model(model, target)
        runs.append({"seed": seed, "model": target, "metrics": metrics,
                     "best_iteration": trep.best_iteration, "final_val_loss": trep.final_val_loss,
                     "iterations_run": len(trep.trace)})
    report["runs"] = runs
    write_json(stem + ".report.json", report)
    return 0


def _holdout_arg(value):
    if value is None or value == "all" or isinstance(value, int):
        return value
    if value in ("none", "None"):
        return None
    try:
        return int(value)
    except ValueError:
        raise ConfigurationError("--holdout-env must be an integer, 'all' or 'none'") from None


def cmd_criteria(args, cfg, base_dir):
    seeds = parse_seeds(args.seeds, cfg)
    data = ex.make_dataset(cfg["dataset"], base_dir)
    raw = args.holdout_env if args.holdout_env is not None else cfg.get("holdout_env", "all")
    holdout = _holdout_arg(raw)
    holdouts = data.envs if holdout == "all" else [holdout]
    cells = [(h, s) for h in holdouts for s in seeds]
    results, errors = run_cells(
        cells, lambda c: run_criteria(data, c[0], cfg["criteria"], [c[1]]).per_seed[0], args.jobs)
    reports = []
    for h in holdouts:
        per_seed = [r for (hh, _), r in zip(cells, results) if hh == h and r is not None]
        keys = [k for k in per_seed[0] if k != "seed"] if per_seed else []
        reports.append({"holdout_env": h, "per_seed": per_seed,
                        "aggregate": aggregate(per_seed, keys)})
    doc = provenance(cfg, seeds)
    doc.update({"metric": "accuracy" if data.task == "classification" else "neg_l2",
                "set_size": int(cfg["criteria"].get("set_size", 32)),
                "reports": reports, "errors": errors})
    path = out_path(args, cfg, "criteria.json")
    write_json(path, doc)
    rows = [{"holdout_env": r["holdout_env"], "seed": rec["seed"], "metric": k, "value": v}
            for r in reports for rec in r["per_seed"] for k, v in rec.items() if k != "seed"]
    write_rows(os.path.splitext(path)[0] + ".csv", rows, ["holdout_env", "seed", "metric", "value"])
    return _exit_for(errors)


def _load_dgp(name, base_dir):
    if isinstance(name, dict):
        return it.DiscreteDGP.from_dict(name)
    if name in it.BUILTINS:
        return it.builtin_dgp(name)
    from .datagen import load_dgp_json
    return load_dgp_json(ex.resolve(name, base_dir))


def theorem_suite(cfg, base_dir=None):
    """Run the configured verification items; returns (doc, failures)."""
    items = cfg.get("items") or [{"dgp": cfg.get("dgp", "counterexample"), "n": cfg.get("n", 4)}]
    results, failures = [], []
    for item in items:
        kind = item.get("check", "theorem")
        ns = item.get("ns") or [item.get("n", 4)]
        for n in ns:
            n = int(n)
            entry = {"check": kind, "n": n, "dgp": item.get("dgp") if isinstance(item.get("dgp"), str) else "inline"}
            try:
                if kind == "theorem":
                    rep = it.verify_theorem(_load_dgp(item.get("dgp", "counterexample"), base_dir), n)
                    entry["report"] = rep.to_dict()
                    if not rep.ok:
                        failures.append(entry)
                elif kind == "counterexample":
                    dgp = counterexample_dgp(**item.get("params", {}))
                    entry["report"] = it.verify_counterexample(dgp, n)
                elif kind == "fuzz":
                    entry["report"] = fuzz_theorem(int(item.get("count", 100)), n,
                                                   int(item.get("seed", 0)))
                    if entry["report"]["violations"]:
                        failures.append(entry)
                else:
                    raise ConfigurationError(f"unknown theorem check {kind!r}")
            except VerificationFailedError as exc:
                entry["report"] = {"passed": False, **exc.values}
                failures.append(entry)
            results.append(entry)
    return {"results": results, "failures": len(failures)}, failures


def fuzz_theorem(count, n, seed=0, n_e=3, n_x=4, n_y=2):
    """Implications (a), (b) and the data-processing bounds on random processes."""
    rng = np.random.default_rng(seed)
    violations = []
    for i in range(count):
        rep = it.verify_theorem(it.random_dgp(rng, n_e, n_x, n_y), n)
        if not rep.ok:
            violations.append({"index": i, "checks": rep.checks})
    return {"count": count, "n": n, "violations": violations}


def cmd_theorem(args, cfg, base_dir):
    if args.dgp:
        cfg = dict(cfg, items=[{"dgp": args.dgp, "ns": [args.n or cfg.get("n", 4)]}])
    elif args.fuzz:
        cfg = dict(cfg, items=[{"check": "fuzz", "count": args.fuzz, "ns": [args.n or 4]}])
    doc, failures = theorem_suite(cfg, base_dir)
    doc.update(provenance(cfg, []))
    write_json(out_path(args, cfg, "theorem.json"), doc)
    return 3 if failures else 0


def cmd_detect(args, cfg, base_dir):
    seeds = parse_seeds(args.seeds, cfg)
    kind = cfg["dataset"]["kind"]
    if args.holdout_env is not None:
        cfg = dict(cfg, holdout_env=_holdout_arg(args.holdout_env))
    if kind == "colored":
        fn = lambda s: ex.colored_selection(cfg, s)  # noqa: E731
    elif kind == "bike":
        fn = lambda s: ex.bike_detection(cfg, s, base_dir)  # noqa: E731
    else:
        raise ConfigurationError(f"detection is defined for colored and bike datasets, not {kind!r}")
    results, errors = run_cells(seeds, fn, args.jobs)
    runs = [r for r in results if r is not None]
    doc = provenance(cfg, seeds)
    doc.update({"runs": runs, "summary": summarize_detection(runs), "errors": errors})
    write_json(out_path(args, cfg, "detect.json"), doc)
    return _exit_for(errors)


def summarize_detection(runs):
    if not runs:
        return {}
    if "rows" in runs[0]:
        table = {}
        for method in runs[0]["rows"]:
            for col in runs[0]["rows"][method]:
                vals = np.array([r["rows"][method][col] for r in runs])
                table.setdefault(method, {})[col] = {"mean": float(vals.mean()),
                                                     "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
        return table
    keys = [k for k in runs[0] if k != "seed"]
    return aggregate(runs, keys)


def cmd_sweep(args, cfg, base_dir):
    seeds = parse_seeds(args.seeds, cfg)
    grid = cfg.get("grid", {})
    if not grid.get("spacings") or not grid.get("set_sizes"):
        raise ConfigurationError("sweep grid needs non-empty spacings and set_sizes")
    results, errors = run_cells(seeds, lambda s: ex.sweep(cfg, [s]), args.jobs)
    rows = [r for res in results if res is not None for r in res]
    rows.sort(key=lambda r: (r["spacing"], r["n"], r["model"], r["seed"]))
    path = out_path(args, cfg, "sweep.csv")
    write_rows(path, rows, ["spacing", "n", "seed", "model", "accuracy"])
    doc = provenance(cfg, seeds)
    doc.update({"rows": rows, "errors": errors})
    write_json(os.path.splitext(path)[0] + ".json", doc)
    return _exit_for(errors)


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "criteria": cmd_criteria,
            "theorem": cmd_theorem, "detect": cmd_detect, "sweep": cmd_sweep}


def build_parser():
    p = argparse.ArgumentParser(prog="ctxdg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ctxdg {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--out", help="output path (overrides the config's 'out')")
        sp.add_argument("--seeds", help="comma-separated seeds, e.g. 0,1,2")
        sp.add_argument("--holdout-env", help="environment id, 'all' or 'none'")
        sp.add_argument("--jobs", type=int, default=1, help="parallel worker threads")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "generate":
            sp.add_argument("kind", nargs="?",
                            choices=["simpson", "colored", "counterexample", "dgp-sample", "bike"])
            sp.add_argument("--sizes", type=int, help="rows per environment")
        if name == "theorem":
            sp.add_argument("--dgp", help=f"builtin name ({', '.join(it.BUILTINS)}) or JSON file")
            sp.add_argument("--n", type=int, help="context set size")
            sp.add_argument("--fuzz", type=int, help="number of random processes to check")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigurationError("--jobs must be at least 1")
        cfg, base_dir = load_config(args.config)
        if args.config is None and args.command not in ("generate", "theorem"):
            raise ConfigurationError(f"{args.command} requires --config")
        return COMMANDS[args.command](args, cfg, base_dir)
    except CtxdgError as exc:
        print(f"ctxdg {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyError as exc:
        print(f"ctxdg {args.command}: config is missing key {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
