"""Exact optimum of the score by dynamic programming over node subsets.

Two independent routes to the same optimum: a sink-elimination DP over
subsets of nodes with per-node best-parent-set tables, and literal
enumeration of every DAG inside the super-structure (tiny ``m`` only).
Both ignore the ``|beta| <= M`` box and flag when the winner violates it.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .formulation import MAX_EXHAUSTIVE_PARENTS, ProblemSpec
from .graphs import DirectedGraph, is_acyclic
from .score import LocalScoreCache, all_subset_rss

log = logging.getLogger(__name__)


class OracleError(ValueError):
    pass


@dataclass
class OracleResult:
    dag: DirectedGraph
    beta: dict
    score: float
    subsets_evaluated: int
    structures: int = 0
    m_binding: bool = False
    status: str = "exact"


def _popcount(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    x = a.copy()
    while np.any(x):
        out += x & 1
        x >>= 1
    return out


def _parent_tables(spec: ProblemSpec, k: int):
    """Best local score over every subset of each candidate set (downward closure)."""
    cands = spec.parents_of[k]
    p = len(cands)
    rss = all_subset_rss(spec.gram_data, k, cands, spec.penalty.mu)
    masks = np.arange(1 << p, dtype=np.int64)
    local = rss + spec.penalty.lambda_n * _popcount(masks)
    best = local.copy()
    arg = masks.copy()
    for i in range(p):
        bit = 1 << i
        has = (masks & bit) != 0
        src = masks[has] ^ bit
        better = best[src] < best[has]
        tgt = masks[has][better]
        best[tgt] = best[src[better]]
        arg[tgt] = arg[src[better]]
    return cands, best, arg


def _refit(spec: ProblemSpec, parents: dict[int, list[int]], cache: LocalScoreCache):
    arcs = [(j, k) for k, P in parents.items() for j in P]
    beta, sc = cache.refit(arcs, spec.penalty.lambda_n)
    dag = DirectedGraph(spec.m, frozenset(arcs))
    biggest = max((abs(b) for b in beta.values()), default=0.0)
    return dag, beta, sc, biggest > spec.big_m


def exact_solve(spec: ProblemSpec, max_m: int = 16) -> OracleResult:
    m = spec.m
    if m > max_m:
        raise OracleError(f"exact_solve is limited to m <= {max_m} (got {m})")
    tables = []
    evaluated = 0
    for k in range(m):
        if len(spec.parents_of[k]) > MAX_EXHAUSTIVE_PARENTS:
            raise OracleError(f"node {k} has more than {MAX_EXHAUSTIVE_PARENTS} candidate parents")
        cands, best, arg = _parent_tables(spec, k)
        if not np.all(np.isfinite(best)):
            raise OracleError(f"non-finite local scores at node {k}")
        evaluated += best.size
        tables.append((cands, best, arg))

    full = 1 << m
    masks = np.arange(full, dtype=np.int64)
    # local index of (mask restricted to candidates of v)
    local_idx = []
    for cands, _, _ in tables:
        li = np.zeros(full, dtype=np.int64)
        for i, c in enumerate(cands):
            li |= ((masks >> c) & 1) << i
        local_idx.append(li)

    dp = np.full(full, np.inf)
    dp[0] = 0.0
    sink = np.full(full, -1, dtype=np.int64)
    pc = _popcount(masks)
    for size in range(1, m + 1):
        layer = masks[pc == size]
        bestv = np.full(layer.size, np.inf)
        bests = np.full(layer.size, -1, dtype=np.int64)
        for v in range(m):
            has = (layer >> v) & 1 == 1
            S = layer[has]
            rest = S ^ (1 << v)
            val = dp[rest] + tables[v][1][local_idx[v][rest]]
            cur = bestv[has]
            upd = val < cur
            cur[upd] = val[upd]
            bestv[has] = cur
            sv = bests[has]
            sv[upd] = v
            bests[has] = sv
        dp[layer] = bestv
        sink[layer] = bests

    parents: dict[int, list[int]] = {}
    S = full - 1
    while S:
        v = int(sink[S])
        rest = S ^ (1 << v)
        cands, _, arg = tables[v]
        loc = int(arg[local_idx[v][rest]])
        parents[v] = [c for i, c in enumerate(cands) if loc >> i & 1]
        S = rest
    cache = LocalScoreCache(spec.gram_data, spec.penalty.mu)
    dag, beta, sc, binding = _refit(spec, parents, cache)
    if binding:
        log.warning("oracle optimum has |beta| above M=%.4g; the boxed optimum may differ", spec.big_m)
    return OracleResult(dag, beta, sc, evaluated, 0, binding)


def enumerate_dags(spec: ProblemSpec, m_cap: int = 5) -> OracleResult:
    """Score every DAG whose skeleton lies in the super-structure."""
    m = spec.m
    if m > m_cap:
        raise OracleError(f"enumerate_dags is limited to m <= {m_cap} (got {m})")
    edges = sorted({(min(j, k), max(j, k)) for j, k in spec.super_arcs})
    cache = LocalScoreCache(spec.gram_data, spec.penalty.mu)
    lam = spec.penalty.lambda_n
    best = None
    count = 0
    for states in itertools.product((0, 1, 2), repeat=len(edges)):
        arcs = [(u, v) if s == 1 else (v, u) for (u, v), s in zip(edges, states) if s]
        g = DirectedGraph(m, frozenset(arcs))
        if not is_acyclic(g):
            continue
        count += 1
        pa = g.parents()
        sc = sum(cache.rss(k, pa[k]) for k in range(m)) + lam * len(arcs)
        if best is None or sc < best[0]:
            best = (sc, pa)
    parents = {k: P for k, P in enumerate(best[1])}
    dag, beta, sc, binding = _refit(spec, parents, cache)
    return OracleResult(dag, beta, sc, len(cache), count, binding)
