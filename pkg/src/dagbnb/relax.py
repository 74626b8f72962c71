"""Continuous relaxation at a branch-and-bound node with a certified lower bound.

Every node problem separates over child columns once the linear cuts on ``g``
(cycle cuts, layered-network cuts) are moved into the objective with
multipliers ``nu >= 0``.  Each column is solved by coordinate descent in the
compiled kernel; its bound comes from linearizing the smooth part and
minimizing the separable remainder exactly, so it is valid however loosely
the descent converged.  The multipliers are improved by L-BFGS-B on the dual
function and the best certified bound seen is returned.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog, minimize

from . import kernels
from .formulation import ProblemSpec
from .graphs import Arc, Cycle

log = logging.getLogger(__name__)

EPS_INT = 1e-6
CUT_VIOLATION = 1e-7


class SolverFailure(RuntimeError):
    """Column descent did not reach the requested gap within its sweep cap."""

    def __init__(self, msg: str, best_bound: float, result: "RelaxResult | None" = None):
        super().__init__(msg)
        self.best_bound = best_bound
        self.result = result


@dataclass(frozen=True)
class LinearCut:
    """``sum_a w_a g_a <= rhs`` with non-negative weights."""

    arcs: tuple[Arc, ...]
    weights: tuple[float, ...]
    rhs: float

    @classmethod
    def from_cycle(cls, c: Cycle) -> "LinearCut":
        arcs = tuple(sorted(c.arcs))
        return cls(arcs, (1.0,) * len(arcs), float(len(arcs) - 1))

    def lhs(self, g: dict[Arc, float]) -> float:
        return sum(w * g.get(a, 0.0) for a, w in zip(self.arcs, self.weights))


@dataclass(frozen=True)
class PerspCut:
    """Tangent ``v >= 2 qbar beta - qbar^2 g`` of the perspective of ``beta^2``."""

    arc: Arc
    qbar: float

    def rhs(self, beta: float, g: float) -> float:
        return 2.0 * self.qbar * beta - self.qbar ** 2 * g


@dataclass
class NodeConstraints:
    fixed_one: frozenset = frozenset()
    fixed_zero: frozenset = frozenset()
    free: frozenset = frozenset()
    cycle_cuts: list = field(default_factory=list)
    persp_cuts: list = field(default_factory=list)
    linear_cuts: list = field(default_factory=list)
    ln_state: dict | None = None   # {"z_lo": {arc: 0/1}, "z_hi": {arc: 0/1}}

    @classmethod
    def root(cls, spec: ProblemSpec, **kw) -> "NodeConstraints":
        return cls(free=frozenset(spec.super_arcs), **kw)

    def validate(self, spec: ProblemSpec) -> None:
        arcs = set(spec.super_arcs)
        parts = [set(self.fixed_one), set(self.fixed_zero), set(self.free)]
        if set().union(*parts) != arcs or sum(map(len, parts)) != len(arcs):
            raise ValueError("fixed_one, fixed_zero and free must partition the super-structure arcs")
        for c in self.cycle_cuts:
            if any(a not in arcs for a in c.arcs):
                raise ValueError(f"cycle cut {c.arcs} leaves the super-structure")

    def bounds(self, spec: ProblemSpec) -> tuple[np.ndarray, np.ndarray]:
        idx = spec.arc_index
        lo = np.zeros(len(spec.super_arcs))
        hi = np.ones(len(spec.super_arcs))
        for a in self.fixed_one:
            lo[idx[a]] = 1.0
        for a in self.fixed_zero:
            hi[idx[a]] = 0.0
        return lo, hi

    def all_cuts(self) -> list[LinearCut]:
        return [LinearCut.from_cycle(c) for c in self.cycle_cuts] + list(self.linear_cuts)


@dataclass
class RelaxResult:
    beta: np.ndarray
    g: np.ndarray
    primal_value: float
    certified_lb: float
    integral: bool
    kkt_residual: float
    nu: dict = field(default_factory=dict)
    status: str = "ok"
    sweeps: int = 0

    def beta_dict(self, spec: ProblemSpec, tol: float = 0.0) -> dict[Arc, float]:
        return {a: float(b) for a, b in zip(spec.super_arcs, self.beta) if abs(b) > tol}

    def g_dict(self, spec: ProblemSpec) -> dict[Arc, float]:
        return dict(zip(spec.super_arcs, map(float, self.g)))


def _persp_csr(spec: ProblemSpec, cuts: list[PerspCut]):
    # per arc index: sorted |qbar| for each sign
    pos: dict[int, list[float]] = {}
    neg: dict[int, list[float]] = {}
    idx = spec.arc_index
    for c in cuts:
        if c.qbar > 0:
            pos.setdefault(idx[c.arc], []).append(c.qbar)
        elif c.qbar < 0:
            neg.setdefault(idx[c.arc], []).append(-c.qbar)
    out = []
    for col in spec.columns:
        blocks = []
        for store in (pos, neg):
            lists = [sorted(set(store.get(int(a), ()))) for a in col.arcs]
            ptr = np.zeros(len(lists) + 1, dtype=np.int64)
            ptr[1:] = np.cumsum([len(x) for x in lists])
            vals = np.array([q for x in lists for q in x], dtype=np.float64)
            blocks += [ptr, vals]
        out.append(tuple(blocks))
    return out


_EMPTY = np.zeros(0)


def _plain_csr(p: int):
    ptr = np.zeros(p + 1, dtype=np.int64)
    return ptr, _EMPTY, ptr, _EMPTY


class _ColumnSolver:
    def __init__(self, spec, lo, hi, beta, csr, exact, tol, max_sweeps):
        self.spec, self.lo, self.hi, self.beta = spec, lo, hi, beta
        self.csr, self.exact, self.max_sweeps = csr, exact, max_sweeps
        self.g = np.zeros_like(beta)
        self.primal = np.zeros(spec.m)
        self.lower = np.zeros(spec.m)
        scale = 1.0 + sum(c.yy for c in spec.columns)
        self.col_tol = tol * scale / max(spec.m, 1)
        self.sweeps = 0
        self.failed: list[int] = []

    def run(self, cost: np.ndarray, cols) -> None:
        M = self.spec.big_m
        for k in cols:
            col = self.spec.columns[k]
            ix = col.arcs
            if ix.size == 0:
                self.primal[k] = self.lower[k] = col.yy
                continue
            b = np.ascontiguousarray(self.beta[ix])
            c = np.ascontiguousarray(cost[ix])
            lo = np.ascontiguousarray(self.lo[ix])
            hi = np.ascontiguousarray(self.hi[ix])
            gk = np.zeros(ix.size)
            cp, cv, cn, cw = self.csr[k] if self.csr is not None else _plain_csr(ix.size)
            step_tol = 1e-9 * M
            done = 0
            while True:
                chunk = min(200, self.max_sweeps - done)
                sw = kernels.cd_column(col.Q, col.lin, col.delta, c, lo, hi, M,
                                       cp, cv, cn, cw, self.exact, b, chunk, step_tol)
                done += sw
                pr, lb = kernels.column_eval(col.Q, col.lin, col.yy, col.delta, c, lo, hi, M,
                                             cp, cv, cn, cw, self.exact, b, gk)
                if pr - lb <= self.col_tol + 1e-12 * abs(pr):
                    break
                if done >= self.max_sweeps:
                    self.failed.append(k)
                    break
                if sw < chunk:
                    step_tol *= 1e-2
                    if step_tol < 1e-16 * M:
                        self.failed.append(k)
                        break
            self.sweeps += done
            self.beta[ix] = b
            self.g[ix] = gk
            self.primal[k] = pr
            self.lower[k] = lb


def _infeasible(spec, beta) -> RelaxResult:
    n = len(spec.super_arcs)
    return RelaxResult(beta if beta is not None else np.zeros(n), np.zeros(n),
                       np.inf, np.inf, False, 0.0, status="infeasible")


def solve_relaxation(spec: ProblemSpec, node: NodeConstraints, tol: float = 1e-6,
                     warm: RelaxResult | None = None, max_sweeps: int = 20000,
                     dual_iters: int = 80, dump: str | Path | None = None) -> RelaxResult:
    """Solve the node relaxation of ``spec`` under ``node``; see module docstring.

    Raises :class:`SolverFailure` when a column misses the gap ``tol`` within
    ``max_sweeps`` sweeps.  An infeasible node returns ``status="infeasible"``
    with infinite bounds.
    """
    A = len(spec.super_arcs)
    idx = spec.arc_index
    lo, hi = node.bounds(spec)
    if np.any(lo > hi):
        return _infeasible(spec, None)
    cuts = node.all_cuts()
    W_rows, rhs = [], np.array([c.rhs for c in cuts], dtype=np.float64)
    for c in cuts:
        ix = np.array([idx[a] for a in c.arcs], dtype=np.int64)
        w = np.array(c.weights, dtype=np.float64)
        if float(w @ lo[ix]) > c.rhs + 1e-9:
            return _infeasible(spec, None)
        W_rows.append((ix, w))

    beta = np.zeros(A) if warm is None or warm.status == "infeasible" else warm.beta.copy()
    beta = np.clip(beta, -spec.big_m * hi, spec.big_m * hi)
    exact = spec.mode != "perspcut"
    csr = _persp_csr(spec, node.persp_cuts) if spec.mode == "perspcut" else None
    solver = _ColumnSolver(spec, lo, hi, beta, csr, exact, tol, max_sweeps)
    lam = spec.penalty.lambda_n
    head = np.array([a[1] for a in spec.super_arcs])

    def cost_of(nu):
        c = np.full(A, lam)
        for v, (ix, w) in zip(nu, W_rows):
            if v:
                c[ix] += v * w
        return c

    K = len(cuts)
    keys = [(c.arcs, c.weights, c.rhs) for c in cuts]
    nu0 = np.zeros(K)
    if warm is not None and warm.nu:
        nu0 = np.array([warm.nu.get(k, 0.0) for k in keys])
    touched = sorted({int(head[i]) for ix, _ in W_rows for i in ix})
    solver.run(cost_of(nu0), range(spec.m))
    best = {"lb": -np.inf}

    def record(nu):
        s = float(nu @ rhs) if K else 0.0
        lb = float(solver.lower.sum()) - s
        pv = float(solver.primal.sum()) - s
        if lb > best["lb"]:
            best.update(lb=lb, primal=pv, beta=solver.beta.copy(), g=solver.g.copy(), nu=nu.copy())
        return pv

    record(nu0)
    if K:
        def fun(nu):
            solver.run(cost_of(nu), touched)
            pv = record(nu)
            grad = np.array([w @ solver.g[ix] for ix, w in W_rows]) - rhs
            return -pv, -grad

        try:
            # any nu >= 0 certifies; the cap keeps line searches in a sane range
            cap = 1.0 + sum(c.yy for c in spec.columns)
            nu0 = np.minimum(nu0, cap)
            minimize(fun, nu0, jac=True, method="L-BFGS-B", bounds=[(0.0, cap)] * K,
                     options={"maxiter": dual_iters, "ftol": 1e-13, "gtol": 1e-9})
        except (FloatingPointError, ValueError) as exc:  # pragma: no cover - defensive
            log.debug("dual ascent stopped early: %s", exc)

    b, g = best["beta"], best["g"]
    free = (lo < hi)
    frac = np.minimum(g, 1.0 - g)
    integral = bool(np.all(frac[free] <= EPS_INT))
    res = RelaxResult(b, g, best["primal"], best["lb"], integral,
                      max(best["primal"] - best["lb"], 0.0),
                      {k: float(v) for k, v in zip(keys, best["nu"]) if v > 0},
                      sweeps=solver.sweeps)
    if dump is not None:
        _dump(dump, spec, node, res)
    # only the returned point matters; probes during the dual line search may stall
    if res.kkt_residual > solver.col_tol * spec.m + 1e-12 * abs(res.primal_value):
        res.status = "failure"
        raise SolverFailure(f"column descent stalled on nodes {sorted(set(solver.failed))} "
                            f"(gap {res.kkt_residual:.3e})", res.certified_lb, res)
    return res


def _dump(path, spec, node, res):
    lines = [f"mode {spec.mode} M {spec.big_m:.6g} lambda {spec.penalty.lambda_n:.6g}",
             f"fixed_one {sorted(node.fixed_one)}", f"fixed_zero {sorted(node.fixed_zero)}",
             f"cycle_cuts {[c.arcs for c in node.cycle_cuts]}",
             f"linear_cuts {len(node.linear_cuts)} persp_cuts {len(node.persp_cuts)}",
             f"primal {res.primal_value:.12g} lb {res.certified_lb:.12g}"]
    lines += [f"{j} {k} beta={b:.6g} g={g:.6g}" for (j, k), b, g in zip(spec.super_arcs, res.beta, res.g)]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- perspective cuts

def separate_perspective_cut(arc: Arc, beta_val: float, g_val: float, M: float,
                             v_val: float = 0.0) -> PerspCut | None:
    """Tangent at ``qbar = beta/g`` (clamped to ``[-M, M]``) if it cuts off ``(beta, g, v)``."""
    if g_val <= 0.0:
        return None
    qbar = float(np.clip(beta_val / g_val, -M, M))
    if qbar == 0.0:
        return None
    cut = PerspCut(arc, qbar)
    if cut.rhs(beta_val, g_val) - v_val > CUT_VIOLATION:
        return cut
    return None


def envelope_value(cuts_for_arc: list[PerspCut], beta: float, g: float) -> float:
    return max([0.0] + [c.rhs(beta, g) for c in cuts_for_arc])


def separate_perspective_cuts(spec: ProblemSpec, node: NodeConstraints, res: RelaxResult,
                              min_gain: float = 0.0, q_sep: float = 1e-3) -> list[PerspCut]:
    """Violated tangents at the current point, one per arc at most.

    A tangent is kept when ``delta * violation`` exceeds ``min_gain`` (objective
    units) and no existing tangent on the arc lies within ``q_sep * M`` of it.
    """
    by_arc: dict[Arc, list[PerspCut]] = {}
    for c in node.persp_cuts:
        by_arc.setdefault(c.arc, []).append(c)
    delta = spec.effective_delta
    out = []
    for a, b, g in zip(spec.super_arcs, res.beta, res.g):
        if g <= 0.0 or b == 0.0:
            continue
        mine = by_arc.get(a, [])
        v = envelope_value(mine, b, g)
        cut = separate_perspective_cut(a, b, g, spec.big_m, v)
        if cut is None:
            continue
        if delta[a[0]] * (cut.rhs(b, g) - v) <= min_gain:
            continue
        if any(abs(c.qbar - cut.qbar) <= q_sep * spec.big_m for c in mine):
            continue
        out.append(cut)
    return out


# ---------------------------------------------------------------- layered network

def ln_cut(spec: ProblemSpec, node: NodeConstraints, g: np.ndarray) -> LinearCut | None:
    """Valid inequality on ``g`` implied by the layered-network constraints.

    Solves ``min sum s`` subject to ``z + s >= g``, ``z_jk + z_kj <= 1``,
    ``z_jk - (m-1) z_kj <= psi_k - psi_j``, ``0 <= psi <= m-1`` and the node's
    bounds on ``z``.  A positive optimum ``v`` is separated by the dual
    multipliers ``y`` of ``z + s >= g``: every feasible ``g`` satisfies
    ``y.g <= y.g* - v``.
    """
    m = spec.m
    arcs = spec.super_arcs
    A = len(arcs)
    if A == 0:
        return None
    idx = spec.arc_index
    nv = 2 * A + m     # z, s, psi
    c = np.concatenate([np.zeros(A), np.ones(A), np.zeros(m)])
    rows, b = [], []
    # -z - s <= -g
    for i in range(A):
        r = np.zeros(nv)
        r[i] = -1.0
        r[A + i] = -1.0
        rows.append(r)
        b.append(-g[i])
    n_cover = A
    for i, (j, k) in enumerate(arcs):
        r = np.zeros(nv)
        r[i] = 1.0
        r[idx[(k, j)]] -= (m - 1)
        r[2 * A + k] -= 1.0
        r[2 * A + j] += 1.0
        rows.append(r)
        b.append(0.0)
        if j < k:
            r = np.zeros(nv)
            r[i] = 1.0
            r[idx[(k, j)]] = 1.0
            rows.append(r)
            b.append(1.0)
    zlo = np.zeros(A)
    zhi = np.ones(A)
    lo, hi = node.bounds(spec)
    zlo = np.maximum(zlo, lo)
    if node.ln_state:
        for a, v in node.ln_state.get("z_lo", {}).items():
            zlo[idx[a]] = max(zlo[idx[a]], v)
        for a, v in node.ln_state.get("z_hi", {}).items():
            zhi[idx[a]] = min(zhi[idx[a]], v)
    bounds = [(zlo[i], zhi[i]) for i in range(A)] + [(0, None)] * A + [(0, m - 1)] * m
    res = linprog(c, A_ub=np.array(rows), b_ub=np.array(b), bounds=bounds, method="highs")
    if res.status != 0 or res.fun <= CUT_VIOLATION:
        return None
    y = -np.asarray(res.ineqlin.marginals[:n_cover])
    y[y < 1e-12] = 0.0
    keep = np.nonzero(y)[0]
    if keep.size == 0:
        return None
    rhs = float(y @ g) - float(res.fun)
    return LinearCut(tuple(arcs[i] for i in keep), tuple(float(y[i]) for i in keep), rhs)
