"""Compiled vs pure-Python kernel timings.

Times the three hot paths through the public API under each backend:
all-subset RSS tables (oracle), one root relaxation (coordinate descent plus
bound evaluation) and a small branch-and-bound run.  Each timing is the
minimum over ``--repeat`` runs.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from dagbnb import kernels
from dagbnb.bnb import BranchAndBound, StopRule
from dagbnb.datagen import GenConfig, make_instance
from dagbnb.formulation import build_problem
from dagbnb.relax import NodeConstraints, solve_relaxation
from dagbnb.score import GramData, all_subset_rss


def _best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def cases(quick: bool):
    big = make_instance(GenConfig(m=14 if quick else 16, n=100, seed=0))
    gd = GramData.from_data(big.data)
    cands = list(range(1, gd.m))
    root = make_instance(GenConfig(m=12 if quick else 20, n=100, seed=1))
    rspec, _ = build_problem(root.data, root.complete)
    small = make_instance(GenConfig(m=6, n=100, seed=2))
    bspec, _ = build_problem(small.data, small.complete)
    return {
        f"subset_rss p={len(cands)}": lambda: float(all_subset_rss(gd, 0, cands).sum()),
        f"root relaxation m={rspec.m}": lambda: solve_relaxation(rspec, NodeConstraints.root(rspec)).certified_lb,
        f"bnb m={bspec.m} 60 nodes": lambda: BranchAndBound(bspec, StopRule(0.0, 0.0, node_limit=60)).run().ub,
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--quick", action="store_true", help="smaller instances")
    p.add_argument("--json", help="write results here")
    args = p.parse_args(argv)

    backends = kernels.available()
    work = cases(args.quick)
    results = {}
    for name, fn in work.items():
        row = {}
        for be in backends:
            kernels.use_backend(be)
            reps = 1 if be == "python" else args.repeat
            t, val = _best_of(fn, reps)
            row[be] = {"seconds": t, "value": val}
        results[name] = row
    kernels.use_backend(backends[-1])

    print(f"{'case':32s}" + "".join(f"{b:>14s}" for b in backends) + f"{'speedup':>10s}")
    for name, row in results.items():
        line = f"{name:32s}" + "".join(f"{row[b]['seconds']:13.4f}s" for b in backends)
        if "compiled" in row:
            line += f"{row['python']['seconds'] / row['compiled']['seconds']:9.1f}x"
            a, b = row["python"]["value"], row["compiled"]["value"]
            if not np.isclose(a, b, rtol=1e-6, atol=1e-9):
                line += f"  (values differ: {a:.10g} vs {b:.10g})"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
