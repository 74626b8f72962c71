"""Problem assembly: big-M estimation, delta selection and the Q split."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .graphs import Arc, UndirectedGraph
from .score import GramData, LocalScoreCache, Penalty, all_subset_rss, bic_lambda

log = logging.getLogger(__name__)

MODES = ("bigm", "persp", "perspcut")
ENCODINGS = ("cp_lazy", "ln")
DELTA_RULES = ("eig", "greedy", "zero")

DEFAULT_EPS = 1e-6
MAX_EXHAUSTIVE_PARENTS = 20


class FormulationError(ValueError):
    """Raised when a problem cannot be assembled (e.g. Q is not PSD)."""


def tolerant_cholesky(A: np.ndarray, tol: float = 1e-10):
    """Upper factor ``R`` with ``R.T @ R ~= A`` for PSD (possibly singular) ``A``.

    Pivots within ``tol * max(diag)`` of zero are treated as zero and their row
    is dropped.  Returns ``(R, min_pivot)``; ``R`` is None when a pivot falls
    below ``-tol * max(diag)``.
    """
    A = np.asarray(A, dtype=np.float64)
    m = A.shape[0]
    R = np.zeros_like(A)
    if m == 0:
        return R, 0.0
    scale = max(float(np.max(np.abs(np.diag(A)))), 1e-300)
    min_piv = math.inf
    for j in range(m):
        d = A[j, j] - R[:j, j] @ R[:j, j]
        min_piv = min(min_piv, d / scale)
        if d < -tol * scale:
            return None, min_piv
        if d <= tol * scale:
            continue
        r = math.sqrt(d)
        R[j, j] = r
        R[j, j + 1:] = (A[j, j + 1:] - R[:j, j] @ R[:j, j + 1:]) / r
    return R, min_piv


@dataclass(frozen=True)
class QSplit:
    q_mat: np.ndarray
    chol: np.ndarray
    min_pivot: float

    @classmethod
    def build(cls, q_mat: np.ndarray, tol: float = 1e-10) -> "QSplit":
        R, piv = tolerant_cholesky(q_mat, tol)
        if R is None:
            raise FormulationError(
                f"Q = G + mu I - diag(delta) is not PSD (relative pivot {piv:.3e})")
        return cls(q_mat, R, piv)

    def reconstruction_error(self) -> float:
        return float(np.max(np.abs(self.chol.T @ self.chol - self.q_mat), initial=0.0))


@dataclass(frozen=True)
class ColumnBlock:
    k: int
    arcs: np.ndarray      # indices into ProblemSpec.super_arcs
    parents: list[int]
    Q: np.ndarray
    lin: np.ndarray
    yy: float
    delta: np.ndarray


@dataclass(frozen=True)
class ProblemSpec:
    gram_data: GramData
    super_arcs: tuple[Arc, ...]
    penalty: Penalty
    big_m: float
    delta: np.ndarray
    mode: str = "persp"
    encoding: str = "cp_lazy"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.encoding not in ENCODINGS:
            raise ValueError(f"encoding must be one of {ENCODINGS}")
        if not self.big_m > 0:
            raise ValueError("big_m must be positive")
        arcs = tuple(sorted(set(self.super_arcs)))
        s = set(arcs)
        if any((k, j) not in s for j, k in arcs):
            raise ValueError("super_arcs must contain both orientations of every edge")
        m = self.gram_data.m
        if any(not (0 <= j < m and 0 <= k < m) or j == k for j, k in arcs):
            raise ValueError("super_arcs reference invalid nodes")
        d = np.asarray(self.delta, dtype=np.float64)
        if d.shape != (m,) or np.any(d < 0):
            raise ValueError("delta must be a non-negative vector of length m")
        object.__setattr__(self, "super_arcs", arcs)
        object.__setattr__(self, "delta", d)

    @property
    def m(self) -> int:
        return self.gram_data.m

    @property
    def lambda_n(self) -> float:
        return self.penalty.lambda_n

    @cached_property
    def effective_delta(self) -> np.ndarray:
        return np.zeros(self.m) if self.mode == "bigm" else self.delta

    @cached_property
    def q_mat(self) -> np.ndarray:
        Q = self.gram_data.gram + self.penalty.mu * np.eye(self.m) - np.diag(self.effective_delta)
        return 0.5 * (Q + Q.T)

    @cached_property
    def parents_of(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.m)]
        for j, k in self.super_arcs:
            out[k].append(j)
        return out

    @cached_property
    def arc_index(self) -> dict[Arc, int]:
        return {a: i for i, a in enumerate(self.super_arcs)}

    @cached_property
    def columns(self) -> list["ColumnBlock"]:
        """Per-child blocks of the separable column problems."""
        G = self.gram_data.gram
        Q = self.q_mat
        idx = self.arc_index
        out = []
        for k in range(self.m):
            P = self.parents_of[k]
            out.append(ColumnBlock(
                k, np.array([idx[(j, k)] for j in P], dtype=np.int64), P,
                np.ascontiguousarray(Q[np.ix_(P, P)]), np.ascontiguousarray(G[P, k]),
                float(G[k, k]), np.ascontiguousarray(self.effective_delta[P])))
        return out

    @property
    def n_edges(self) -> int:
        return len(self.super_arcs) // 2

    def echo(self) -> dict:
        return {
            "m": self.m, "n": self.gram_data.n, "lambda_n": self.penalty.lambda_n,
            "mu": self.penalty.mu, "big_m": self.big_m, "mode": self.mode,
            "encoding": self.encoding, "super_edges": self.n_edges,
            "delta_sum": float(self.delta.sum()), **self.options,
        }


# ---------------------------------------------------------------- big-M

def _best_subset(gd: GramData, k: int, cands: list[int], lam: float, mu: float,
                 cache: LocalScoreCache) -> list[int]:
    if len(cands) <= MAX_EXHAUSTIVE_PARENTS:
        rss = all_subset_rss(gd, k, cands, mu)
        sizes = np.array([bin(i).count("1") for i in range(rss.size)])
        best = int(np.argmin(rss + lam * sizes))
        return [c for i, c in enumerate(cands) if best >> i & 1]
    # forward selection
    chosen: list[int] = []
    cur = cache.rss(k, chosen)
    while len(chosen) < len(cands):
        val, c = min((cache.rss(k, chosen + [c]), c) for c in cands if c not in chosen)
        if val + lam >= cur:
            break
        chosen.append(c)
        cur = val
    return chosen


def relaxed_beta(gd: GramData, penalty: Penalty, super_arcs) -> dict[Arc, float]:
    """Per-node best-subset fit with the cycle constraints dropped."""
    parents: list[list[int]] = [[] for _ in range(gd.m)]
    for j, k in sorted(set(super_arcs)):
        parents[k].append(j)
    cache = LocalScoreCache(gd, penalty.mu)
    out: dict[Arc, float] = {}
    for k in range(gd.m):
        if not parents[k]:
            continue
        P = _best_subset(gd, k, parents[k], penalty.lambda_n, penalty.mu, cache)
        _, b = cache.fit(k, P)
        out.update({(j, k): w for j, w in b.items()})
    return out


def estimate_big_m(gd: GramData, penalty: Penalty, gamma: float = 2.0,
                   super_arcs=None, floor: float = 1.0) -> float:
    """``gamma * max |beta^R|`` over the acyclicity-free optimum; ``floor`` if it is 0."""
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    if super_arcs is None:
        super_arcs = UndirectedGraph.complete(gd.m).bidirected()
    beta = relaxed_beta(gd, penalty, super_arcs)
    biggest = max((abs(w) for w in beta.values()), default=0.0)
    if biggest == 0.0:
        return floor
    return gamma * biggest


# ---------------------------------------------------------------- delta

def select_delta_eig(A: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """``max(lambda_min(A) - eps, 0)`` in every coordinate."""
    A = np.asarray(A, dtype=np.float64)
    lam = float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])
    v = max(lam - eps, 0.0)
    if v == 0.0:
        log.warning("smallest eigenvalue %.3e leaves no room for delta; "
                    "the perspective relaxation reduces to big-M", lam)
    return np.full(A.shape[0], v)


def _is_psd(S: np.ndarray, tol: float) -> bool:
    return tolerant_cholesky(S, tol)[0] is not None


def _schur_cap(S: np.ndarray, i: int) -> float:
    # largest t with S - t e_i e_i^T still PSD
    rest = [r for r in range(S.shape[0]) if r != i]
    if not rest:
        return float(S[i, i])
    b = S[rest, i]
    sol = np.linalg.lstsq(S[np.ix_(rest, rest)], b, rcond=1e-12)[0]
    return max(float(S[i, i] - b @ sol), 0.0)


def _barrier_ascent(A: np.ndarray, lo: np.ndarray, d0: np.ndarray) -> np.ndarray:
    """Central path of max sum(d) s.t. A - diag(d) > 0, d > lo (A scaled to unit diagonal)."""
    m = A.shape[0]
    d = d0.copy()
    t = 1.0
    while t > 1e-11:
        for _ in range(60):
            slack = d - lo
            if np.any(slack <= 0):
                return d
            try:
                Si = np.linalg.inv(A - np.diag(d))
                grad = 1.0 - t * np.diag(Si) + t / slack
                H = t * (Si * Si) + np.diag(t / slack ** 2)
                step = np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                # numerically on the boundary; the polish takes over
                return d
            if not np.all(np.isfinite(step)):
                return d
            dec = float(grad @ step)
            if dec < 1e-14:
                break
            a = 1.0
            while a > 1e-12:
                nd = d + a * step
                if np.all(nd > lo) and np.linalg.eigvalsh(A - np.diag(nd))[0] > 0:
                    break
                a *= 0.5
            else:
                break
            d = nd
        t *= 0.2
    return d if m else d0


def select_delta_greedy(A: np.ndarray, eps: float = DEFAULT_EPS,
                        lower: np.ndarray | None = None, polish_tol: float = 1e-6) -> np.ndarray:
    """Feasibility-preserving ascent on ``sum(delta)`` subject to ``A - diag(delta) PSD``.

    The ascent follows a log-barrier central path from a strictly feasible
    point and then polishes coordinate-wise: each round tries half the exact
    Schur-complement headroom of every coordinate and keeps the step only when
    a Cholesky factorization with pivot tolerance ``eps`` succeeds.  ``lower``
    defaults to the eigenvalue choice, so the result dominates it
    componentwise; pass zeros to search the whole non-negative orthant.
    """
    A = np.asarray(A, dtype=np.float64)
    A = 0.5 * (A + A.T)
    m = A.shape[0]
    d_eig = select_delta_eig(A, eps)
    lo = d_eig.copy() if lower is None else np.maximum(np.asarray(lower, float), 0.0)
    if m == 0:
        return lo
    s = max(float(np.max(np.diag(A))), 1e-300)
    As = A / s
    los = lo / s
    # strictly feasible start: half way to the eigen boundary above lo
    head = float(np.linalg.eigvalsh(As - np.diag(los))[0])
    if head > 1e-9:
        d = _barrier_ascent(As, los, los + 0.5 * head / m)
    else:
        d = los.copy()
    # the barrier stops inside the cone; push coordinates to the boundary
    for _ in range(200):
        moved = 0.0
        for i in range(m):
            cap = _schur_cap(As - np.diag(d), i)
            step = 0.5 * cap
            while step > polish_tol * 1e-3:
                trial = d.copy()
                trial[i] += step
                if _is_psd(As - np.diag(trial), 1e-12):
                    d = trial
                    moved = max(moved, step)
                    break
                step *= 0.5
        if moved < polish_tol:
            break
    d = np.maximum(d * s, lo)
    if not _is_psd(A - np.diag(d), 1e-12):
        log.warning("greedy delta lost PSD-ness; falling back to the lower bound")
        return lo
    return d


def delta_for(rule: str, A: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    if rule == "eig":
        return select_delta_eig(A, eps)
    if rule == "greedy":
        return select_delta_greedy(A, eps)
    if rule == "zero":
        return np.zeros(A.shape[0])
    raise ValueError(f"unknown delta rule {rule!r}")


# ---------------------------------------------------------------- assembly

def build_problem(data, super_graph: UndirectedGraph | None = None, *,
                  lambda_n: float | None = None, mu: float = 0.0, gamma: float = 2.0,
                  big_m: float | None = None, delta: str | np.ndarray = "eig",
                  mode: str = "persp", encoding: str = "cp_lazy",
                  eps: float = DEFAULT_EPS) -> tuple[ProblemSpec, QSplit]:
    """Wire data, super-structure and options into a :class:`ProblemSpec`."""
    gd = data if isinstance(data, GramData) else GramData.from_data(data)
    if super_graph is None:
        super_graph = UndirectedGraph.complete(gd.m)
    if super_graph.m != gd.m:
        raise ValueError(f"super-structure has {super_graph.m} nodes, data has {gd.m} columns")
    if lambda_n is None:
        lambda_n = bic_lambda(gd.n)
    pen = Penalty(float(lambda_n), float(mu))
    if gd.n < gd.m and mu == 0:
        log.warning("n=%d < m=%d: X^T X is rank deficient, so delta collapses to 0 "
                    "unless mu > 0", gd.n, gd.m)
    arcs = super_graph.bidirected()
    if big_m is None:
        big_m = estimate_big_m(gd, pen, gamma, arcs)
    A = gd.gram + mu * np.eye(gd.m)
    if isinstance(delta, str):
        rule = delta
        dvec = delta_for(delta, A, eps)
    else:
        rule = "given"
        dvec = np.asarray(delta, dtype=np.float64)
    spec = ProblemSpec(gd, tuple(arcs), pen, float(big_m), dvec, mode, encoding,
                       {"gamma": gamma, "delta_rule": rule})
    q = QSplit.build(A - np.diag(dvec))
    if q.min_pivot < -1e-8:
        raise FormulationError(f"Cholesky pivot {q.min_pivot:.3e} below -1e-8")
    return spec, q
