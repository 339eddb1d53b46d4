"""Shared test utilities."""
import numpy as np

from ctxdg.numcore import ReLU


def away_from_kinks(stack, x, rng, scale=3.0):
    """Resample x until no pre-activation sits within 1e-6 of a ReLU kink."""
    for _ in range(100):
        _, cache = stack.forward_cached(x)
        pre = [inp for layer, inp in zip(stack.layers, cache) if isinstance(layer, ReLU)]
        if all(np.min(np.abs(p)) >= 1e-6 for p in pre):
            return x
        x = rng.uniform(-scale, scale, x.shape)
    raise AssertionError("could not avoid kinks")


# acceptance outcomes keyed by criterion number, printed by conftest at the end of the run
ACCEPTANCE = {}


def report_criterion(number, title, checks):
    """Record one PASS/FAIL line; ``checks`` holds (label, ok, observed) triples."""
    ok = all(c[1] for c in checks)
    failed = [f"{label} (got {observed})" for label, good, observed in checks if not good]
    detail = "; ".join(failed) if failed else "; ".join(f"{label}: {obs}" for label, _, obs in checks)
    ACCEPTANCE[number] = f"criterion {number} {'PASS' if ok else 'FAIL'}  {title}  [{detail}]"
    return ok, failed
