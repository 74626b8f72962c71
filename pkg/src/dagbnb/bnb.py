"""Best-first branch-and-bound over arc indicators.

Acyclicity is enforced lazily: with the ``cp_lazy`` encoding an integral
relaxation point whose support has a cycle adds that cycle's cut to a global
pool and the node is re-solved; with ``ln`` the layered-network constraints
are projected onto ``g`` through LP duality (see :func:`relax.ln_cut`) and
the layer-order binaries ``z`` are branched on once ``g`` is integral.
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .formulation import ProblemSpec
from .graphs import Arc, Cycle, DirectedGraph, find_cycle, reachable_from
from .relax import (EPS_INT, LinearCut, NodeConstraints, RelaxResult, SolverFailure, ln_cut,
                    separate_perspective_cuts, solve_relaxation)
from .score import LocalScoreCache

log = logging.getLogger(__name__)

PRUNE_TOL = 1e-9
BRANCHING = ("max_beta", "most_fractional")
NEAR_TIGHT = 0.25
STATUSES = ("optimal", "gap_reached", "time_limit", "node_limit", "solver_failure")


@dataclass(frozen=True)
class StopRule:
    abs_gap: float = 0.0
    rel_gap: float = 0.01
    time_limit: float = math.inf
    node_limit: float = math.inf

    def __post_init__(self):
        if self.abs_gap < 0 or self.rel_gap < 0:
            raise ValueError("gap thresholds must be non-negative")
        if self.time_limit <= 0 or self.node_limit <= 0:
            raise ValueError("limits must be positive")
        if (math.isinf(self.time_limit) and math.isinf(self.node_limit)
                and self.abs_gap == 0 and self.rel_gap == 0):
            log.warning("no limit and zero gaps: the search runs until the tree is exhausted")

    @classmethod
    def default_for(cls, m: int, **kw) -> "StopRule":
        kw.setdefault("time_limit", 50.0 * m)
        return cls(**kw)


def early_stop_threshold(m: int, n: int, s_m: float) -> float:
    """Absolute gap ``s_m * ln(m) / n`` at which the search may stop."""
    if s_m < 0:
        raise ValueError("s_m must be non-negative")
    if n < 1 or m < 1:
        raise ValueError("m and n must be positive")
    return s_m * math.log(m) / n


@dataclass
class Incumbent:
    dag: DirectedGraph
    beta: dict
    ub: float
    m_binding: bool = False


@dataclass
class SolveReport:
    status: str
    ub: float
    lb: float
    gap: float
    rgap: float
    nodes_explored: int
    cuts_added: int
    relaxations: int
    wall_seconds: float
    arcs: list
    config: dict
    root_relaxation_value: float = math.nan
    m_binding: bool = False
    trajectory: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("ub", "lb", "gap", "rgap", "root_relaxation_value"):
            if not math.isfinite(d[k]):
                d[k] = None
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @property
    def dag(self) -> DirectedGraph:
        return DirectedGraph(self.config.get("m", 0), frozenset((j, k) for j, k, _ in self.arcs))


def rel_gap(ub: float, lb: float) -> float:
    if not math.isfinite(ub) or not math.isfinite(lb):
        return math.inf
    if ub <= 0:
        return 0.0 if ub - lb <= 0 else math.inf
    return (ub - lb) / ub


def _make_incumbent(spec: ProblemSpec, arcs, cache: LocalScoreCache) -> Incumbent:
    beta, ub = cache.refit(arcs, spec.penalty.lambda_n)
    dag = DirectedGraph(spec.m, frozenset(arcs))
    binding = any(abs(b) >= spec.big_m * (1.0 - 1e-4) for b in beta.values())
    return Incumbent(dag, beta, ub, binding)


def primal_heuristic(relax_point, spec: ProblemSpec, cache: LocalScoreCache | None = None,
                     ub: float = math.inf) -> Incumbent | None:
    """Threshold ``|beta| >= 1e-3 M``, break cycles at their weakest arc, refit.

    ``relax_point`` is a :class:`RelaxResult` or a mapping arc -> beta.
    """
    cache = cache or LocalScoreCache(spec.gram_data, spec.penalty.mu)
    if isinstance(relax_point, RelaxResult):
        vals = dict(zip(spec.super_arcs, map(float, relax_point.beta)))
    else:
        vals = dict(relax_point)
    thr = 1e-3 * spec.big_m
    support = {a for a, b in vals.items() if abs(b) >= thr}
    while True:
        cyc = find_cycle(DirectedGraph(spec.m, frozenset(support)))
        if cyc is None:
            break
        support.discard(min(cyc.arcs, key=lambda a: (abs(vals[a]), a)))
    inc = _make_incumbent(spec, sorted(support), cache)
    return inc if inc.ub < ub else None


@dataclass
class _Node:
    key: float
    fixed_one: frozenset
    fixed_zero: frozenset
    depth: int = 0
    warm: RelaxResult | None = None
    linear_cuts: tuple = ()
    ln_state: dict | None = None
    active: frozenset = frozenset()   # keys of pool cuts this node dualizes


def _cut_key(c: Cycle):
    return tuple(sorted(c.arcs))


@dataclass
class SearchState:
    spec: ProblemSpec
    stop: StopRule
    open: list = field(default_factory=list)
    global_lb: float = -math.inf
    incumbent: Incumbent | None = None
    cut_pool: list = field(default_factory=list)
    persp_pool: list = field(default_factory=list)
    nodes_explored: int = 0
    cuts_added: int = 0
    relaxations: int = 0
    t0: float = field(default_factory=time.perf_counter)
    trajectory: list = field(default_factory=list)
    _seq: itertools.count = field(default_factory=itertools.count)
    _pool_keys: set = field(default_factory=set)
    # smallest bound among nodes closed by the gap tolerance rather than by ub
    pruned_lb: float = math.inf

    @property
    def ub(self) -> float:
        return self.incumbent.ub if self.incumbent else math.inf

    def clock(self) -> float:
        return time.perf_counter() - self.t0

    def push(self, node: _Node) -> None:
        heapq.heappush(self.open, (node.key, next(self._seq), node))

    def offer(self, inc: Incumbent | None) -> bool:
        if inc is not None and inc.ub < self.ub:
            self.incumbent = inc
            return True
        return False

    def add_cycle_cut(self, c: Cycle) -> bool:
        key = _cut_key(c)
        if key in self._pool_keys:
            return False
        self._pool_keys.add(key)
        self.cut_pool.append(c)
        self.cuts_added += 1
        return True

    def update_lb(self, pending=()) -> None:
        keys = [self.open[0][0]] if self.open else []
        keys += list(pending)
        if self.pruned_lb < math.inf:
            keys.append(self.pruned_lb)
        cur = min(keys) if keys else self.ub
        cur = min(max(cur, self.global_lb), self.ub)
        self.global_lb = cur

    def snapshot(self) -> None:
        point = (round(self.clock(), 6), self.global_lb, self.ub)
        if not self.trajectory or self.trajectory[-1][1:] != point[1:]:
            self.trajectory.append(point)


def _propagate(spec: ProblemSpec, fixed_one: frozenset, fixed_zero: frozenset) -> frozenset:
    """Fix to zero every free arc that would close a cycle with the fixed-one arcs."""
    children: list[list[int]] = [[] for _ in range(spec.m)]
    for j, k in fixed_one:
        children[j].append(k)
    reach = {}
    extra = set()
    for (j, k) in spec.super_arcs:
        if (j, k) in fixed_one or (j, k) in fixed_zero:
            continue
        if k not in reach:
            reach[k] = reachable_from(children, k)
        if j in reach[k]:
            extra.add((j, k))
    return fixed_zero | extra


def violated_cycles(spec: ProblemSpec, g: np.ndarray, limit: int = 5,
                    tol: float = 1e-6) -> list[Cycle]:
    """Cycles ``C`` with ``sum_C g > |C| - 1``, i.e. ``sum_C (1 - g) < 1``.

    Shortest paths under arc weights ``1 - g`` (arcs with ``g`` near 0 are
    skipped since they cannot take part in a violated cycle).
    """
    m = spec.m
    W = np.full((m, m), np.inf)
    for (j, k), v in zip(spec.super_arcs, g):
        if v > tol:
            W[j, k] = max(1.0 - v, 1e-12)
    dist, pred = shortest_path(np.where(np.isinf(W), 0.0, W), method="D",
                               return_predecessors=True)
    found = {}
    for (j, k), v in zip(spec.super_arcs, g):
        if not np.isfinite(W[j, k]) or not np.isfinite(dist[k, j]):
            continue
        total = W[j, k] + dist[k, j]
        if total >= 1.0 - tol:
            continue
        path = [j]
        while path[-1] != k:
            path.append(int(pred[k, path[-1]]))
        nodes = path[::-1]          # k ... j
        arcs = tuple(zip(nodes, nodes[1:] + nodes[:1]))
        key = tuple(sorted(arcs))
        if key not in found:
            found[key] = (total, Cycle(arcs))
    return [c for _, c in sorted(found.values(), key=lambda x: x[0])[:limit]]


class _Aborted(Exception):
    pass


class BranchAndBound:
    def __init__(self, spec: ProblemSpec, stop: StopRule, tol: float = 1e-8,
                 log_interval: float = 5.0, threads: int = 1, persp_rounds: int = 20,
                 ln_rounds: int = 5, max_sweeps: int = 20000, fractional_cuts: bool = True,
                 cycle_rounds: int = 10, branching: str = "max_beta"):
        if branching not in BRANCHING:
            raise ValueError(f"branching must be one of {BRANCHING}")
        self.spec = spec
        self.stop = stop
        self.tol = tol
        self.log_interval = log_interval
        self.threads = max(1, int(threads))
        self.persp_rounds = persp_rounds
        self.ln_rounds = ln_rounds
        self.max_sweeps = max_sweeps
        self.fractional_cuts = fractional_cuts
        self.cycle_rounds = cycle_rounds
        self.branching = branching
        # tangents worth less than this (objective units) are not added
        self.persp_gain = 1e-4 * max(spec.lambda_n, 1e-12)
        self.cache = LocalScoreCache(spec.gram_data, spec.penalty.mu)
        self.state = SearchState(spec, stop)
        self.root_value = math.nan
        self._last_log = -math.inf
        self.status = None

    # -------------------------------------------------------------- helpers
    def _constraints(self, node: _Node) -> NodeConstraints:
        st = self.state
        arcs = set(self.spec.super_arcs)
        cuts = []
        if self.spec.encoding == "cp_lazy":
            # active set: cuts priced at the parent plus cuts nearly tight there
            g = node.warm.g if node.warm is not None and node.warm.status == "ok" else None
            idx = self.spec.arc_index
            for c in st.cut_pool:
                if any(a in node.fixed_zero for a in c.arcs):
                    continue
                if (g is None or _cut_key(c) in node.active
                        or sum(g[idx[a]] for a in c.arcs) >= len(c) - 1 - NEAR_TIGHT):
                    cuts.append(c)
        return NodeConstraints(node.fixed_one, node.fixed_zero,
                               frozenset(arcs - node.fixed_one - node.fixed_zero),
                               cuts, list(st.persp_pool), list(node.linear_cuts), node.ln_state)

    def _solve(self, node: _Node, nc: NodeConstraints) -> RelaxResult:
        self.state.relaxations += 1
        try:
            return solve_relaxation(self.spec, nc, self.tol, node.warm, self.max_sweeps)
        except SolverFailure:
            log.warning("relaxation stalled at depth %d; retrying with a larger sweep cap",
                        node.depth)
        self.state.relaxations += 1
        try:
            return solve_relaxation(self.spec, nc, self.tol, node.warm, 10 * self.max_sweeps)
        except SolverFailure as exc:
            raise _Aborted(str(exc)) from exc

    def _log(self, force: bool = False) -> None:
        st = self.state
        now = st.clock()
        if force or now - self._last_log >= self.log_interval:
            self._last_log = now
            log.info("t=%.2f lb=%.6f ub=%.6f gap=%.6f open=%d", now, st.global_lb, st.ub,
                     st.ub - st.global_lb, len(st.open))

    def _closed(self, lb: float) -> bool:
        """True when a node with bound ``lb`` can be dropped.

        Nodes within the stopping tolerance of the incumbent are dropped too;
        their bound is kept in ``pruned_lb`` so the reported lb stays valid.
        """
        st = self.state
        ub = st.ub
        if lb >= ub - PRUNE_TOL:
            return True
        tol = max(self.stop.abs_gap, self.stop.rel_gap * ub if ub > 0 else 0.0)
        if tol > 0 and lb >= ub - tol:
            st.pruned_lb = min(st.pruned_lb, lb)
            return True
        return False

    def _limits(self) -> str | None:
        st = self.state
        gap = st.ub - st.global_lb
        if st.incumbent is not None and (gap <= 0.0 or (not st.open and st.pruned_lb == math.inf)):
            return "optimal"
        if st.incumbent is not None and not st.open:
            return "gap_reached"
        if st.incumbent is not None and (gap <= self.stop.abs_gap
                                         or rel_gap(st.ub, st.global_lb) <= self.stop.rel_gap):
            return "gap_reached"
        if st.clock() >= self.stop.time_limit:
            return "time_limit"
        if st.nodes_explored >= self.stop.node_limit:
            return "node_limit"
        return None

    def _branch(self, node: _Node, lb: float, res: RelaxResult, arc: Arc, ln_z: bool = False):
        st = self.state
        rev = (arc[1], arc[0])
        priced = frozenset(k[0] for k in res.nu)
        zero = _Node(lb, node.fixed_one, node.fixed_zero | {arc}, node.depth + 1, res,
                     node.linear_cuts, node.ln_state, priced)
        if ln_z:
            zs = dict(node.ln_state or {})
            zl = dict(zs.get("z_lo", {}))
            zl[arc] = 1.0
            zs["z_lo"] = zl
            fz = node.fixed_zero | ({rev} if rev in self.spec.arc_index else set())
            one = _Node(lb, node.fixed_one, fz, node.depth + 1, res, node.linear_cuts, zs, priced)
        else:
            one = _Node(lb, node.fixed_one | {arc}, node.fixed_zero, node.depth + 1, res,
                        node.linear_cuts, node.ln_state, priced)
        st.push(zero)
        st.push(one)

    # -------------------------------------------------------------- node
    def _process(self, node: _Node, first: RelaxResult | None) -> None:
        st = self.state
        spec = self.spec
        st.nodes_explored += 1
        if self._closed(node.key):
            return
        rounds_p = rounds_l = rounds_c = 0
        res = first
        while True:
            nc = self._constraints(node)
            if res is None:
                res = self._solve(node, nc)
            if node.depth == 0 and math.isnan(self.root_value):
                self.root_value = res.certified_lb
            if res.status == "infeasible":
                return
            lb = max(node.key, res.certified_lb)
            if self._closed(lb):
                return
            cap_p = self.persp_rounds if node.depth == 0 else min(self.persp_rounds, 2)
            if spec.mode == "perspcut" and rounds_p < cap_p:
                new = separate_perspective_cuts(spec, nc, res, self.persp_gain)
                if new:
                    rounds_p += 1
                    st.persp_pool.extend(new)
                    st.cuts_added += len(new)
                    node.warm = res
                    res = None
                    continue
            if spec.encoding == "cp_lazy" and rounds_c < self.cycle_rounds:
                have = {_cut_key(c) for c in nc.cycle_cuts}
                idx = spec.arc_index
                missing = [c for c in st.cut_pool if _cut_key(c) not in have
                           and sum(res.g[idx[a]] for a in c.arcs) > len(c) - 1 + 1e-6]
                if missing:
                    rounds_c += 1
                    node.active = node.active | {_cut_key(c) for c in missing}
                    node.warm = res
                    res = None
                    continue
            st.offer(primal_heuristic(res, spec, self.cache, st.ub))
            if (spec.encoding == "cp_lazy" and self.fractional_cuts
                    and not res.integral and rounds_c < self.cycle_rounds):
                added = [c for c in violated_cycles(spec, res.g) if st.add_cycle_cut(c)]
                if added:
                    rounds_c += 1
                    node.active = node.active | {_cut_key(c) for c in added}
                    node.warm = res
                    res = None
                    continue
            if spec.encoding == "ln" and rounds_l < self.ln_rounds:
                cut = ln_cut(spec, nc, res.g)
                if cut is not None:
                    rounds_l += 1
                    node.linear_cuts = node.linear_cuts + (cut,)
                    st.cuts_added += 1
                    node.warm = res
                    res = None
                    continue
            if res.integral:
                support = [a for a, g in zip(spec.super_arcs, res.g) if g >= 0.5]
                cyc = find_cycle(DirectedGraph(spec.m, frozenset(support)))
                if cyc is None:
                    st.offer(_make_incumbent(spec, support, self.cache))
                    return
                if spec.encoding == "cp_lazy" and st.add_cycle_cut(cyc):
                    node.active = node.active | {_cut_key(cyc)}
                    node.warm = res
                    res = None
                    continue
                free = sorted(a for a in cyc.arcs
                              if a not in node.fixed_one and a not in node.fixed_zero)
                node.warm = res
                self._branch(node, lb, res, free[0], ln_z=spec.encoding == "ln")
                return
            self._branch(node, lb, res, self._branch_arc(node, res))
            return

    def _branch_arc(self, node: _Node, res: RelaxResult) -> Arc:
        """Free fractional arc to branch on; ties go to the smallest arc.

        ``most_fractional`` maximizes ``min(g, 1-g)``; ``max_beta`` picks the
        fractional arc with the largest ``|beta|``.
        """
        best, arc = -1.0, None
        for a, g, b in zip(self.spec.super_arcs, res.g, res.beta):
            if a in node.fixed_one or a in node.fixed_zero:
                continue
            f = min(g, 1.0 - g)
            if f <= EPS_INT:
                continue
            v = f if self.branching == "most_fractional" else abs(b)
            if v > best + 1e-12:
                best, arc = v, a
        return arc

    # -------------------------------------------------------------- main
    def run(self) -> SolveReport:
        st = self.state
        spec = self.spec
        st.offer(_make_incumbent(spec, [], self.cache))
        st.push(_Node(-math.inf, frozenset(), frozenset()))
        st.update_lb()
        st.snapshot()
        pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None
        try:
            while True:
                self.status = self._limits()
                if self.status:
                    break
                batch = []
                while st.open and len(batch) < self.threads:
                    _, _, node = heapq.heappop(st.open)
                    node.fixed_zero = _propagate(spec, node.fixed_one, node.fixed_zero)
                    batch.append(node)
                firsts = [None] * len(batch)
                if pool is not None and len(batch) > 1:
                    jobs = [(n, self._constraints(n)) for n in batch]
                    firsts = list(pool.map(lambda job: self._solve(*job), jobs))
                for i, node in enumerate(batch):
                    self._process(node, firsts[i])
                    st.update_lb(n.key for n in batch[i + 1:])
                    st.snapshot()
                    self._log()
        except _Aborted as exc:
            log.error("aborting: %s", exc)
            self.status = "solver_failure"
        finally:
            if pool is not None:
                pool.shutdown()
        if self.status == "optimal":
            st.global_lb = st.ub
        st.snapshot()
        self._log(force=True)
        return self._report()

    def _report(self) -> SolveReport:
        st = self.state
        inc = st.incumbent
        ub, lb = st.ub, st.global_lb
        arcs = sorted([j, k, float(b)] for (j, k), b in inc.beta.items()) if inc else []
        if inc and inc.m_binding:
            log.warning("incumbent coefficient within 1e-4 M of the bound M=%.4g", self.spec.big_m)
        return SolveReport(self.status, ub, lb, max(ub - lb, 0.0), max(rel_gap(ub, lb), 0.0),
                           st.nodes_explored, st.cuts_added, st.relaxations,
                           st.clock(), arcs, {**self.spec.echo(), **_stop_echo(self.stop)},
                           self.root_value, bool(inc and inc.m_binding), list(st.trajectory))


def _stop_echo(stop: StopRule) -> dict:
    return {k: (v if math.isfinite(v) else None) for k, v in asdict(stop).items()}


def solve(spec: ProblemSpec, stop: StopRule | None = None, **kw) -> SolveReport:
    """Branch-and-bound on ``spec``; keyword arguments go to :class:`BranchAndBound`."""
    stop = stop or StopRule.default_for(spec.m)
    return BranchAndBound(spec, stop, **kw).run()
