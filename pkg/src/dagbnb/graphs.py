"""Directed and undirected graph primitives on nodes ``0..m-1``."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable


Arc = tuple[int, int]


class CyclicGraphError(ValueError):
    """Raised when an operation requires a DAG but got a cyclic graph."""


@dataclass(frozen=True)
class UndirectedGraph:
    m: int
    edges: frozenset[Arc] = field(default_factory=frozenset)

    def __post_init__(self):
        norm = set()
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if not (0 <= u < self.m and 0 <= v < self.m):
                raise ValueError(f"edge ({u},{v}) outside 0..{self.m - 1}")
            norm.add((min(u, v), max(u, v)))
        object.__setattr__(self, "edges", frozenset(norm))

    @classmethod
    def complete(cls, m: int) -> "UndirectedGraph":
        return cls(m, frozenset(combinations(range(m), 2)))

    def bidirected(self) -> list[Arc]:
        """Both orientations of every edge, sorted lexicographically."""
        return sorted([(u, v) for u, v in self.edges] + [(v, u) for u, v in self.edges])

    def neighbors(self, v: int) -> list[int]:
        return sorted({b for a, b in self.edges if a == v} | {a for a, b in self.edges if b == v})

    def __len__(self):
        return len(self.edges)


@dataclass(frozen=True)
class DirectedGraph:
    m: int
    arcs: frozenset[Arc] = field(default_factory=frozenset)

    def __post_init__(self):
        arcs = frozenset((int(u), int(v)) for u, v in self.arcs)
        for u, v in arcs:
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if not (0 <= u < self.m and 0 <= v < self.m):
                raise ValueError(f"arc ({u},{v}) outside 0..{self.m - 1}")
        object.__setattr__(self, "arcs", arcs)

    def children(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.m)]
        for u, v in sorted(self.arcs):
            out[u].append(v)
        return out

    def parents(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.m)]
        for u, v in sorted(self.arcs):
            out[v].append(u)
        return out

    def skeleton(self) -> UndirectedGraph:
        return UndirectedGraph(self.m, frozenset(self.arcs))

    def __len__(self):
        return len(self.arcs)


@dataclass(frozen=True)
class Cycle:
    """Directed cycle stored as its chain of arcs."""

    arcs: tuple[Arc, ...]

    def __post_init__(self):
        if len(self.arcs) < 2:
            raise ValueError("a cycle needs at least two arcs")
        for (a, b), (c, _) in zip(self.arcs, self.arcs[1:] + self.arcs[:1]):
            if b != c:
                raise ValueError(f"arcs do not chain: {self.arcs}")
        nodes = [a for a, _ in self.arcs]
        if len(set(nodes)) != len(nodes):
            raise ValueError(f"repeated node in cycle: {self.arcs}")

    @property
    def nodes(self) -> list[int]:
        return [a for a, _ in self.arcs]

    def __len__(self):
        return len(self.arcs)


def find_cycle(g: DirectedGraph) -> Cycle | None:
    """Return a simple directed cycle of ``g``, or None when ``g`` is acyclic.

    Iterative depth-first search; the cycle is read off the DFS stack when a
    back arc is met.
    """
    children = g.children()
    state = [0] * g.m  # 0 unseen, 1 on stack, 2 done
    for root in range(g.m):
        if state[root]:
            continue
        stack = [(root, iter(children[root]))]
        path = [root]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                path.pop()
                state[node] = 2
            elif state[nxt] == 1:
                nodes = path[path.index(nxt):]
                return Cycle(tuple(zip(nodes, nodes[1:] + nodes[:1])))
            elif state[nxt] == 0:
                state[nxt] = 1
                path.append(nxt)
                stack.append((nxt, iter(children[nxt])))
    return None


def topological_order(g: DirectedGraph) -> list[int] | None:
    """Kahn's algorithm with smallest-index-first tie-break; None if cyclic."""
    indeg = [0] * g.m
    children = g.children()
    for _, v in g.arcs:
        indeg[v] += 1
    ready = [v for v in range(g.m) if indeg[v] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        v = heapq.heappop(ready)
        order.append(v)
        for w in children[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(ready, w)
    return order if len(order) == g.m else None


def is_acyclic(g: DirectedGraph) -> bool:
    return topological_order(g) is not None


def moralize(dag: DirectedGraph) -> UndirectedGraph:
    if find_cycle(dag) is not None:
        raise CyclicGraphError("moralize needs an acyclic graph")
    edges = set(dag.arcs)
    for pa in dag.parents():
        edges.update(combinations(pa, 2))
    return UndirectedGraph(dag.m, frozenset(edges))


def _pair_state(arcs: frozenset[Arc], a: int, b: int) -> int:
    return ((a, b) in arcs) | (((b, a) in arcs) << 1)


def shd(truth: DirectedGraph, estimate: DirectedGraph) -> int:
    """Structural Hamming distance; a reversed arc counts as one move.

    Per unordered node pair the cost is 0 when the pair agrees, 2 when one
    graph has both orientations and the other none, and 1 otherwise.
    """
    if truth.m != estimate.m:
        raise ValueError(f"node counts differ: {truth.m} vs {estimate.m}")
    pairs = {(min(u, v), max(u, v)) for u, v in truth.arcs | estimate.arcs}
    total = 0
    for a, b in pairs:
        s, t = _pair_state(truth.arcs, a, b), _pair_state(estimate.arcs, a, b)
        if s == t:
            continue
        total += 2 if {s, t} == {0, 3} else 1
    return total


def reachable_from(g_children: list[list[int]], src: int) -> set[int]:
    seen = {src}
    stack = [src]
    while stack:
        v = stack.pop()
        for w in g_children[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


# text format: first line m, then one "u v" line per arc or edge

def write_graph(path: str | Path, g: DirectedGraph | UndirectedGraph) -> None:
    pairs = sorted(g.arcs if isinstance(g, DirectedGraph) else g.edges)
    lines = [str(g.m)] + [f"{u} {v}" for u, v in pairs]
    Path(path).write_text("\n".join(lines) + "\n")


def _read_pairs(path: str | Path) -> tuple[int, list[Arc]]:
    lines = [ln.split("#")[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"{path}: empty graph file")
    m = int(lines[0])
    pairs = []
    for ln in lines[1:]:
        u, v = ln.split()
        pairs.append((int(u), int(v)))
    return m, pairs


def read_digraph(path: str | Path) -> DirectedGraph:
    m, pairs = _read_pairs(path)
    return DirectedGraph(m, frozenset(pairs))


def read_undirected(path: str | Path) -> UndirectedGraph:
    m, pairs = _read_pairs(path)
    return UndirectedGraph(m, frozenset(pairs))


def arcs_of(items: Iterable[Arc]) -> frozenset[Arc]:
    return frozenset((int(u), int(v)) for u, v in items)
