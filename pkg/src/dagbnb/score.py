"""Penalized least-squares score, Gram precomputation and local-score cache."""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

# pivots below this fraction of the original diagonal count as collinear
SINGULAR_TOL = 1e-10


@dataclass(frozen=True)
class GramData:
    data: np.ndarray
    gram: np.ndarray
    col_sq: np.ndarray

    @classmethod
    def from_data(cls, X) -> "GramData":
        X = np.array(X, dtype=np.float64, copy=True, ndmin=2)
        if not np.all(np.isfinite(X)):
            raise ValueError("data matrix has non-finite entries")
        G = X.T @ X
        G = 0.5 * (G + G.T)
        X.setflags(write=False)
        G.setflags(write=False)
        return cls(X, G, np.diag(G).copy())

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def m(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Penalty:
    lambda_n: float
    mu: float = 0.0

    def __post_init__(self):
        if self.lambda_n < 0 or self.mu < 0:
            raise ValueError("lambda_n and mu must be non-negative")


def bic_lambda(n: float) -> float:
    if n < 2:
        raise ValueError("bic_lambda needs n >= 2")
    return math.log(n)


def _check_arcs(arcs, m):
    for j, k in arcs:
        if not (0 <= j < m and 0 <= k < m) or j == k:
            raise ValueError(f"arc ({j},{k}) is not valid for m={m}")


def score(beta: Mapping[tuple[int, int], float], support: Iterable[tuple[int, int]],
          gd: GramData, penalty: Penalty) -> float:
    """``||X - XB||_F^2 + mu ||B||^2 + lambda_n |support|`` evaluated through the Gram matrix."""
    support = set(support)
    _check_arcs(support, gd.m)
    extra = set(beta) - support
    if any(beta[a] != 0.0 for a in extra):
        raise ValueError("beta has nonzero entries outside the support")
    B = np.zeros((gd.m, gd.m))
    for (j, k) in support:
        B[j, k] = beta.get((j, k), 0.0)
    G = gd.gram
    # tr((I-B)^T G (I-B)) = tr(G) - 2 tr(G B) + tr(B^T G B)
    loss = float(np.trace(G) - 2.0 * np.sum(G * B) + np.sum(B * (G @ B)))
    return max(loss, 0.0) + penalty.mu * float(np.sum(B * B)) + penalty.lambda_n * len(support)


def ols(k: int, parents: Iterable[int], gd: GramData, mu: float = 0.0):
    """Ridge/OLS fit of column ``k`` on ``parents``; returns (beta, rss).

    ``rss`` is the minimized objective ``||X_k - X_P b||^2 + mu ||b||^2``.  A
    singular system yields the minimum-norm solution.
    """
    P = list(parents)
    if k in P:
        raise ValueError(f"node {k} cannot be its own parent")
    yy = float(gd.col_sq[k])
    if not P:
        return np.zeros(0), yy
    A = gd.gram[np.ix_(P, P)] + mu * np.eye(len(P))
    b = gd.gram[P, k]
    beta, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < len(P) and mu == 0.0:
        log.warning("degenerate design regressing %d on %s (rank %d)", k, P, rank)
    rss = yy - 2.0 * float(beta @ b) + float(beta @ A @ beta)
    return beta, max(rss, 0.0)


def augmented_gram(gd: GramData, k: int, cands: list[int], mu: float) -> np.ndarray:
    idx = list(cands) + [k]
    C = np.array(gd.gram[np.ix_(idx, idx)], dtype=np.float64)
    p = len(cands)
    C[np.arange(p), np.arange(p)] += mu
    return C


def all_subset_rss(gd: GramData, k: int, cands: list[int], mu: float = 0.0) -> np.ndarray:
    """RSS for every subset of ``cands`` (bit ``i`` of the index = ``cands[i]``)."""
    C = augmented_gram(gd, k, cands, mu)
    return np.maximum(kernels.subset_rss(C, SINGULAR_TOL), 0.0)


@dataclass
class LocalScoreCache:
    """Memoized per-(node, parent set) regressions."""

    gd: GramData
    mu: float = 0.0
    _store: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def fit(self, k: int, parents: Iterable[int]):
        key = (k, frozenset(parents))
        hit = self._store.get(key)
        if hit is not None:
            return hit
        P = sorted(key[1])
        beta, rss = ols(k, P, self.gd, self.mu)
        val = (rss, dict(zip(P, map(float, beta))))
        with self._lock:
            self._store.setdefault(key, val)
        return val

    def rss(self, k: int, parents: Iterable[int]) -> float:
        return self.fit(k, parents)[0]

    def __len__(self):
        return len(self._store)

    def refit(self, arcs: Iterable[tuple[int, int]], lambda_n: float):
        """Per-node OLS on a support; returns (beta dict, score)."""
        arcs = set(arcs)
        parents: dict[int, list[int]] = {k: [] for k in range(self.gd.m)}
        for j, k in arcs:
            parents[k].append(j)
        beta = {}
        total = 0.0
        for k, P in parents.items():
            rss, b = self.fit(k, P)
            total += rss
            beta.update({(j, k): w for j, w in b.items()})
        return beta, total + lambda_n * len(arcs)
