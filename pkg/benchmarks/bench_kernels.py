"""Compare the compiled message-passing kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--json PATH]

Micro-benchmarks call both implementations directly on MUTAG-sized and
larger synthetic inputs. The end-to-end row times a short training run in
a subprocess per backend (GCLVIEWS_BACKEND selects the fallback).
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from gclviews import _pykernels

try:
    from gclviews import _kernels
except ImportError:
    _kernels = None


def make_inputs(n_nodes: int, n_arcs: int, dim: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(n_nodes, dim))
    src = rng.integers(0, n_nodes, n_arcs)
    dst = rng.integers(0, n_nodes, n_arcs)
    dropped = (rng.random(n_nodes) < 0.2).astype(np.uint8)
    return h, src, dst, dropped


def bench_case(impl, h, src, dst, dropped, repeat: int) -> dict[str, float]:
    n = h.shape[0]
    calls = {
        "neighbor_sum": lambda: impl.neighbor_sum(h, src, dst, n),
        "scatter_add_rows": lambda: impl.scatter_add_rows(h[src], dst, n),
        "keep_arcs": lambda: impl.keep_arcs(src, dst, dropped),
    }
    out = {}
    for name, fn in calls.items():
        number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-7)))
        out[name] = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
    return out


E2E = """
import time
from gclviews.cli import load_graphs
from gclviews.config import ExperimentConfig
from gclviews.training import run_semi_fold
from gclviews import kernels
gs, _ = load_graphs('{data}')
cfg = ExperimentConfig(hidden=64, layers=3, gen_hidden=64, gen_layers=3, batch_size=32, epochs=3)
t = time.perf_counter()
run_semi_fold(gs, cfg, 'joint', 0, 0)
print(kernels.BACKEND, time.perf_counter() - t)
"""


def bench_end_to_end(data: str) -> dict[str, float]:
    out = {}
    for backend in ("cython", "python"):
        env = dict(os.environ, GCLVIEWS_BACKEND=backend)
        r = subprocess.run([sys.executable, "-c", E2E.format(data=data)], env=env, capture_output=True, text=True,
                           check=True)
        name, secs = r.stdout.split()
        out[name] = float(secs)
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write results here")
    ap.add_argument("--data", default=os.path.join(os.path.dirname(__file__), "..", "data", "MUTAG"))
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
        return 1
    sizes = {"mutag_batch": (570, 1260, 64), "medium": (20_000, 80_000, 64), "large": (100_000, 500_000, 32)}
    results = {"kernels": {}, "end_to_end": {}}
    print(f"{'case':<14}{'kernel':<18}{'cython (us)':>14}{'python (us)':>14}{'speedup':>10}")
    for case, (n, m, d) in sizes.items():
        h, src, dst, dropped = make_inputs(n, m, d)
        c = bench_case(_kernels, h, src, dst, dropped, args.repeat)
        p = bench_case(_pykernels, h, src, dst, dropped, args.repeat)
        for k in c:
            results["kernels"][f"{case}/{k}"] = {"cython": c[k], "python": p[k]}
            print(f"{case:<14}{k:<18}{c[k] * 1e6:>14.1f}{p[k] * 1e6:>14.1f}{p[k] / c[k]:>9.2f}x")
    if not args.skip_e2e and os.path.isdir(args.data):
        e2e = bench_end_to_end(args.data)
        results["end_to_end"] = e2e
        print(f"\nend to end, 3-epoch joint fold on MUTAG: cython {e2e['cython']:.2f}s, "
              f"python {e2e['python']:.2f}s ({e2e['python'] / e2e['cython']:.2f}x)")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
