"""Undirected dependency graphs on dense integer nodes ``0..n-1``."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError


def _normalize_edge(i: int, j: int, n: int) -> tuple[int, int]:
    i, j = int(i), int(j)
    if i == j:
        raise InvalidInputError(f"self-loop on node {i}")
    if not (0 <= i < n and 0 <= j < n):
        raise InvalidInputError(f"edge ({i}, {j}) has an endpoint outside [0, {n})")
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class Graph:
    """Immutable undirected simple graph.

    Edges are stored once as sorted pairs ``(i, j)`` with ``i < j``; the
    adjacency lists are derived at construction and never mutated.
    """

    node_count: int
    edges: frozenset = field(default_factory=frozenset)
    _adjacency: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = int(self.node_count)
        if n < 1:
            raise InvalidInputError(f"node_count must be positive, got {self.node_count}")
        norm = frozenset(_normalize_edge(i, j, n) for i, j in self.edges)
        adj: list[list[int]] = [[] for _ in range(n)]
        for i, j in sorted(norm):
            adj[i].append(j)
            adj[j].append(i)
        object.__setattr__(self, "node_count", n)
        object.__setattr__(self, "edges", norm)
        object.__setattr__(self, "_adjacency", tuple(tuple(sorted(a)) for a in adj))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]] = ()) -> "Graph":
        return cls(n, frozenset((int(e[0]), int(e[1])) for e in edges))

    @classmethod
    def path(cls, n: int) -> "Graph":
        return cls.from_edges(n, [(k, k + 1) for k in range(n - 1)])

    @property
    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def _check_node(self, i: int) -> int:
        if not (0 <= int(i) < self.node_count):
            raise InvalidInputError(f"node {i} outside [0, {self.node_count})")
        return int(i)

    def neighbors(self, i: int) -> frozenset:
        return frozenset(self._adjacency[self._check_node(i)])

    def adjacency(self, i: int) -> tuple:
        """Sorted neighbor tuple of ``i`` (no copy, no validation)."""
        return self._adjacency[i]

    def degree(self, i: int) -> int:
        return len(self._adjacency[self._check_node(i)])

    def has_edge(self, i: int, j: int) -> bool:
        return ((i, j) if i < j else (j, i)) in self.edges

    def components(self) -> list[list[int]]:
        """Connected components as sorted node lists, ordered by smallest node."""
        seen = np.zeros(self.node_count, dtype=bool)
        out = []
        for s in range(self.node_count):
            if seen[s]:
                continue
            comp = [s]
            seen[s] = True
            queue = deque([s])
            while queue:
                u = queue.popleft()
                for v in self._adjacency[u]:
                    if not seen[v]:
                        seen[v] = True
                        comp.append(v)
                        queue.append(v)
            out.append(sorted(comp))
        return out

    def is_acyclic(self) -> bool:
        # A graph is a forest iff |E| = n - (number of components).
        return len(self.edges) == self.node_count - len(self.components())

    def subgraph(self, nodes: Iterable[int]) -> "Graph":
        """Induced subgraph keeping the original node indexing."""
        keep = {self._check_node(v) for v in nodes}
        return Graph(self.node_count, frozenset(e for e in self.edges if e[0] in keep and e[1] in keep))

    def to_edge_list(self) -> str:
        return "".join(f"{i} {j}\n" for i, j in self.sorted_edges)


def union_graph(g0: Graph, g1: Graph) -> Graph:
    if g0.node_count != g1.node_count:
        raise InvalidInputError(
            f"cannot union graphs with {g0.node_count} and {g1.node_count} nodes"
        )
    return Graph(g0.node_count, g0.edges | g1.edges)


def is_acyclic(g: Graph) -> bool:
    return g.is_acyclic()


def neighbors(g: Graph, i: int) -> frozenset:
    return g.neighbors(i)


def evolve_observed_graph(g: Graph, observed: Iterable[int]) -> Graph:
    """Graph over the observed nodes with unobserved paths contracted.

    ``(i, j)`` is an edge of the result iff it is an edge of ``g`` or ``g``
    has a path from ``i`` to ``j`` whose interior nodes are all unobserved.
    The result keeps the original indexing; unobserved nodes are isolated.
    """
    obs = [g._check_node(v) for v in observed]
    obs_set = set(obs)
    edges = set()
    for s in obs:
        # BFS from s through unobserved nodes only; observed nodes are endpoints.
        seen = {s}
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in g.adjacency(u):
                if v in seen:
                    continue
                seen.add(v)
                if v in obs_set:
                    edges.add((s, v) if s < v else (v, s))
                else:
                    queue.append(v)
    return Graph(g.node_count, frozenset(edges))


def parse_edge_list(text: str, node_count: int | None = None) -> Graph:
    """Parse ``"i j"`` lines (0-based). Blank lines and ``#`` comments are ignored."""
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InvalidInputError(f"line {lineno}: expected 'i j', got {raw!r}")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise InvalidInputError(f"line {lineno}: non-integer node in {raw!r}") from None
    if node_count is None:
        node_count = 1 + max((max(p) for p in pairs), default=0)
    return Graph.from_edges(node_count, pairs)
