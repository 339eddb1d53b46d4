"""Compare the compiled and numpy/pure-Python kernel backends.

Usage: ``python benchmarks/bench_kernels.py [--repeat 5]``. Prints the best
wall time per kernel and backend and the speedup of the native extension.
"""
import argparse
import timeit

import numpy as np

from ctxdg import kernels


def cases(rng):
    # a training step's worth of context draws and a detector scoring pass
    u = rng.random((64, 1024))
    pools = rng.integers(500, 8000, 64).astype(np.int64)
    u_small, small = np.ascontiguousarray(u[:, :32]), pools // 200
    queries, refs = rng.normal(size=(2000, 8)), rng.normal(size=(600, 8))
    return {
        "sample_indices (64 x 1024)": lambda mod: mod.sample_indices(u, pools, True),
        "sample_indices small pools": lambda mod: mod.sample_indices(u_small, small, True),
        "knn_mean_distance (2000 x 600, k=5)": lambda mod: mod.knn_mean_distance(queries, refs, 5),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--number", type=int, default=10)
    args = p.parse_args(argv)
    mods = kernels.backends()
    if "native" not in mods:
        print("native extension not built; only the python backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'backend':8s} {'best ms':>10s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        times = {}
        for backend, mod in mods.items():
            t = min(timeit.repeat(lambda: fn(mod), number=args.number, repeat=args.repeat))
            times[backend] = 1e3 * t / args.number
        for backend, ms in times.items():
            speed = times["python"] / ms
            print(f"{name:40s} {backend:8s} {ms:10.3f} {speed:8.2f}x")


if __name__ == "__main__":
    main()
