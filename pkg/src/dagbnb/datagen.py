"""Synthetic linear-SEM instances on random Erdos-Renyi DAGs.

All randomness comes from ``numpy.random.Philox`` (a counter-based 64-bit
generator) keyed by ``(seed, stream)``, so an instance is a pure function of
its :class:`GenConfig`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .graphs import DirectedGraph, UndirectedGraph, moralize, topological_order, write_graph


@dataclass(frozen=True)
class GenConfig:
    m: int
    n: int
    d: float = 2.0
    weight_low: float = 0.1
    weight_high: float = 1.0
    noise_sd: float = 1.0
    seed: int = 0
    sign_flip: bool = False

    def __post_init__(self):
        if self.m < 2:
            raise ValueError(f"m must be >= 2, got {self.m}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0 < self.d < self.m:
            raise ValueError(f"d must lie in (0, m), got {self.d}")
        if not 0 < self.weight_low <= self.weight_high:
            raise ValueError("need 0 < weight_low <= weight_high")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")


@dataclass
class GeneratedInstance:
    config: GenConfig
    true_dag: DirectedGraph
    true_beta: dict[tuple[int, int], float]
    data: np.ndarray
    moral: UndirectedGraph
    complete: UndirectedGraph

    def weight_matrix(self) -> np.ndarray:
        B = np.zeros((self.true_dag.m, self.true_dag.m))
        for (j, k), w in self.true_beta.items():
            B[j, k] = w
        return B


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, stream)``."""
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, stream])
    return np.random.Generator(np.random.Philox(ss))


def random_dag(cfg: GenConfig, rng: np.random.Generator | None = None):
    """Random DAG over a uniform node permutation; arc probability d/(m-1)."""
    rng = make_rng(cfg.seed) if rng is None else rng
    m = cfg.m
    order = rng.permutation(m)
    p = min(1.0, cfg.d / (m - 1))
    iu, ju = np.triu_indices(m, k=1)
    keep = rng.random(iu.size) < p
    arcs = sorted((int(order[i]), int(order[j])) for i, j in zip(iu[keep], ju[keep]))
    w = rng.uniform(cfg.weight_low, cfg.weight_high, size=len(arcs))
    if cfg.sign_flip:
        w = np.where(rng.random(len(arcs)) < 0.5, -w, w)
    return DirectedGraph(m, frozenset(arcs)), {a: float(x) for a, x in zip(arcs, w)}


def sample_sem(dag: DirectedGraph, beta: dict, cfg: GenConfig,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw ``cfg.n`` rows of the Gaussian linear SEM on ``dag``."""
    order = topological_order(dag)
    if order is None:
        raise ValueError("sample_sem needs an acyclic graph")
    if set(beta) != set(dag.arcs):
        raise ValueError("beta must be defined exactly on the arcs of dag")
    rng = make_rng(cfg.seed, 1) if rng is None else rng
    X = rng.normal(0.0, 1.0, size=(cfg.n, dag.m)) * cfg.noise_sd
    parents = dag.parents()
    for k in order:
        for j in parents[k]:
            X[:, k] += beta[(j, k)] * X[:, j]
    return X


def make_instance(cfg: GenConfig) -> GeneratedInstance:
    dag, beta = random_dag(cfg, make_rng(cfg.seed, 0))
    X = sample_sem(dag, beta, cfg, make_rng(cfg.seed, 1))
    return GeneratedInstance(cfg, dag, beta, X, moralize(dag), UndirectedGraph.complete(cfg.m))


def write_csv(path: str | Path, X: np.ndarray) -> None:
    np.savetxt(path, X, delimiter=",", fmt="%.17g")


def read_csv(path: str | Path) -> np.ndarray:
    X = np.loadtxt(path, delimiter=",", ndmin=2)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{path}: non-finite entries")
    return X


def write_instance(inst: GeneratedInstance, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "data.csv", out / "true_dag.txt", out / "moral.txt", out / "meta.json"]
    write_csv(paths[0], inst.data)
    write_graph(paths[1], inst.true_dag)
    write_graph(paths[2], inst.moral)
    meta = {
        "config": asdict(inst.config),
        "rng": "numpy Philox via SeedSequence([seed, stream])",
        "true_arcs": len(inst.true_dag),
        "moral_edges": len(inst.moral),
        "true_beta": [[j, k, w] for (j, k), w in sorted(inst.true_beta.items())],
    }
    paths[3].write_text(json.dumps(meta, indent=2))
    return paths
