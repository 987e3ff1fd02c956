"""Timing comparison of the two convex-polygon clipping backends.

The compiled extension and the pure-Python fallback implement the same
rectangle-overlap routine; this script times both on identical random
rectangle pairs and checks that their results agree.

Usage: python benchmarks/clip_backends.py [n_pairs]
"""

import importlib
import sys
import time

import numpy as np


def load_backends():
    backends = {}
    try:
        backends["cython"] = importlib.import_module("cog3d._polyclip")
    except ImportError:
        print("compiled extension not available; timing the fallback only")
    backends["python"] = importlib.import_module("cog3d._polyclip_py")
    return backends


def random_pairs(n, rng):
    return [
        (
            rng.uniform(-1, 1), rng.uniform(-1, 1),
            rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0),
            rng.uniform(0, 2 * np.pi),
            rng.uniform(-1, 1), rng.uniform(-1, 1),
            rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0),
            rng.uniform(0, 2 * np.pi),
        )
        for _ in range(n)
    ]


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 20000
    pairs = random_pairs(n, np.random.default_rng(0))
    backends = load_backends()
    results = {}
    for name, mod in backends.items():
        start = time.perf_counter()
        areas = [mod.rect_overlap_area(*p) for p in pairs]
        elapsed = time.perf_counter() - start
        results[name] = np.asarray(areas)
        print(f"{name:>7}: {elapsed:.3f}s total, {1e6 * elapsed / n:.2f} us/pair")
    if len(results) == 2:
        diff = np.max(np.abs(results["cython"] - results["python"]))
        print(f"max area disagreement: {diff:.3e}")
        assert diff < 1e-9, "backends disagree"


if __name__ == "__main__":
    main()
