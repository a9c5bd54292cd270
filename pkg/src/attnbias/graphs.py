"""Relational graphs behind each attention mechanism, and their masks.

Edge ``(i, j)`` means vertex ``i`` attends to vertex ``j``. A mask is the
adjacency matrix itself: kept scores where there is an edge, ``-inf``
elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from graphlib import CycleError, TopologicalSorter
from typing import Union

import numpy as np

from .linalg import EmptyNeighborhoodError, ShapeError


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RelationalGraph:
    adjacency: np.ndarray

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ShapeError(f"adjacency must be square, got shape {adj.shape}")
        if adj.shape[0] == 0:
            raise GraphError("graph must have at least one vertex")
        empty = np.flatnonzero(~adj.any(axis=1))
        if empty.size:
            raise EmptyNeighborhoodError(int(empty[0]), what="vertex")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @property
    def n_vertices(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def edges(self):
        """Edges in row-major order."""
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.adjacency))]

    def __eq__(self, other):
        if not isinstance(other, RelationalGraph):
            return NotImplemented
        return np.array_equal(self.adjacency, other.adjacency)

    __hash__ = None


def _positive(name, value):
    if int(value) < 1:
        raise GraphError(f"{name} must be >= 1, got {value}")


@dataclass(frozen=True)
class Full:
    n: int

    def __post_init__(self):
        _positive("n", self.n)


@dataclass(frozen=True)
class Causal:
    n: int

    def __post_init__(self):
        _positive("n", self.n)


@dataclass(frozen=True)
class Strided:
    """Each entity attends to the ``p`` most recent entities, itself included."""

    n: int
    p: int

    def __post_init__(self):
        _positive("n", self.n)
        _positive("p", self.p)


@dataclass(frozen=True)
class Bipartite:
    """Decoder set Y attends to encoder set X; vertices are indexed X first."""

    n_x: int
    n_y: int

    def __post_init__(self):
        _positive("n_x", self.n_x)
        _positive("n_y", self.n_y)

    @property
    def n(self) -> int:
        return self.n_x + self.n_y


@dataclass(frozen=True, eq=False)
class CustomGraph:
    graph: RelationalGraph

    @property
    def n(self) -> int:
        return self.graph.n_vertices


MechanismSpec = Union[Full, Causal, Strided, Bipartite, CustomGraph]


def n_vertices(spec: MechanismSpec) -> int:
    return spec.n


def build_graph(spec: MechanismSpec) -> RelationalGraph:
    if isinstance(spec, CustomGraph):
        return spec.graph
    n = spec.n
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    if isinstance(spec, Full):
        adj = np.ones((n, n), dtype=bool)
    elif isinstance(spec, Causal):
        adj = j <= i
    elif isinstance(spec, Strided):
        start = np.maximum(0, i - spec.p + 1)
        adj = (start <= j) & (j <= i)
    elif isinstance(spec, Bipartite):
        adj = np.zeros((n, n), dtype=bool)
        adj[spec.n_x:, : spec.n_x] = True
        # encoder rows are not outputs; a self-loop keeps their neighborhood non-empty
        adj[np.arange(spec.n_x), np.arange(spec.n_x)] = True
    else:
        raise TypeError(f"unknown mechanism {spec!r}")
    return RelationalGraph(adj)


def graph_to_mask(g: RelationalGraph) -> np.ndarray:
    return np.array(g.adjacency, dtype=bool)


def verify_total_order(g: RelationalGraph) -> bool:
    """True iff the edge relation is reflexive, antisymmetric, transitive and total."""
    a = g.adjacency
    if not np.all(np.diag(a)):
        return False
    if not np.all(a | a.T):
        return False
    if np.any(a & a.T & ~np.eye(a.shape[0], dtype=bool)):
        return False
    # transitivity: (k -> j) and (j -> i) implies (k -> i), i.e. R∘R ⊆ R
    composed = (a.astype(np.int64) @ a.astype(np.int64)) > 0
    return not np.any(composed & ~a)


def verify_dag_of_proper_edges(g: RelationalGraph) -> bool:
    """True iff the graph without self-loops has no directed cycle."""
    sorter = TopologicalSorter()
    for i in range(g.n_vertices):
        sorter.add(i, *[int(j) for j in g.neighbors(i) if j != i])
    try:
        sorter.prepare()
    except CycleError:
        return False
    return True
