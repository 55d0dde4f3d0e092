"""Cluster graphs: incidence operator, components, and graph builders.

Vertices are 0-based internally; the edge-list file format is 1-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp


@dataclass
class ClusterGraph:
    """Undirected simple graph on ``n_vertices`` clusters with per-edge weights.

    Edges are stored as ``(j, k)`` with ``j < k``, sorted and deduplicated; row
    ``m`` of the incidence matrix has +1 at ``j`` and -1 at ``k``.
    """

    n_vertices: int
    edges: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.intp))
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n_vertices < 1:
            raise ValueError("graph needs at least one vertex")
        e = np.asarray(self.edges, dtype=np.intp).reshape(-1, 2)
        w = np.ones(len(e)) if self.weights is None else np.asarray(self.weights, dtype=float).ravel()
        if len(w) != len(e):
            raise ValueError("one weight per edge required")
        if np.any(e[:, 0] == e[:, 1]):
            raise ValueError("self-loops are not allowed")
        if np.any((e < 0) | (e >= self.n_vertices)):
            raise ValueError("edge endpoint out of range")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("edge weights must be finite and non-negative")
        e = np.sort(e, axis=1)
        e, first = np.unique(e, axis=0, return_index=True)
        self.edges = e.reshape(-1, 2)
        self.weights = w[first]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def incidence(self) -> sp.csr_matrix:
        M, J = self.n_edges, self.n_vertices
        rows = np.repeat(np.arange(M), 2)
        cols = self.edges.ravel()
        vals = np.tile([1.0, -1.0], M)
        return sp.csr_matrix((vals, (rows, cols)), shape=(M, J))

    def with_weights(self, weights) -> "ClusterGraph":
        return ClusterGraph(self.n_vertices, self.edges.copy(), np.asarray(weights, dtype=float))

    def subgraph_edges(self, mask) -> "ClusterGraph":
        mask = np.asarray(mask, dtype=bool)
        return ClusterGraph(self.n_vertices, self.edges[mask], self.weights[mask])

    def edge_differences(self, values) -> np.ndarray:
        """``|v_j - v_k|`` for every edge."""
        values = np.asarray(values, dtype=float)
        return np.abs(values[self.edges[:, 0]] - values[self.edges[:, 1]])


def apply_incidence(g: ClusterGraph, gamma) -> np.ndarray:
    """``D @ gamma``: entry ``m`` is ``gamma_j - gamma_k`` for edge ``(j, k)``."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (g.n_vertices,):
        raise ValueError(f"expected a vector of length {g.n_vertices}, got shape {gamma.shape}")
    return gamma[g.edges[:, 0]] - gamma[g.edges[:, 1]]


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1


def component_labels(g: ClusterGraph, active=None) -> np.ndarray:
    """Label each vertex by its component in the subgraph of ``active`` edges.

    Labels are numbered in order of each component's smallest vertex.
    """
    edges = g.edges if active is None else g.edges[np.asarray(active, dtype=bool)]
    uf = UnionFind(g.n_vertices)
    for j, k in edges:
        uf.union(int(j), int(k))
    roots = np.array([uf.find(i) for i in range(g.n_vertices)])
    _, labels = np.unique(roots, return_index=False, return_inverse=True)
    # renumber by first appearance so that vertex order defines the labels
    order = {}
    out = np.empty(g.n_vertices, dtype=np.intp)
    for i, lab in enumerate(labels):
        out[i] = order.setdefault(lab, len(order))
    return out


def connected_components(g: ClusterGraph, active=None) -> list[list[int]]:
    """Partition of the vertices (0-based) induced by the active edges."""
    labels = component_labels(g, active)
    return [np.flatnonzero(labels == k).tolist() for k in range(labels.max() + 1)]


def n_components(g: ClusterGraph) -> int:
    return int(component_labels(g).max()) + 1


def build_graph_band(n_vertices: int, offsets: Iterable[int], truncate: bool = False) -> ClusterGraph:
    """Edges ``(j, j + d)`` for each offset ``d``.

    By default every pair inside the index range is linked. With ``truncate``
    the start index runs only up to ``n_vertices - max(offsets)`` for every
    offset, so each vertex starts the same number of edges.
    """
    offsets = sorted(set(int(d) for d in offsets))
    if not offsets or offsets[0] < 1:
        raise ValueError("offsets must be a non-empty set of positive integers")
    last = n_vertices - offsets[-1]
    edges = [(j, j + d) for d in offsets for j in range(last if truncate else n_vertices - d)]
    return ClusterGraph(n_vertices, np.array(edges, dtype=np.intp).reshape(-1, 2))


def build_graph_chi(chi, cutoff: float) -> ClusterGraph:
    """Link pairs whose tail-dependence estimate exceeds ``cutoff``."""
    chi = np.asarray(chi, dtype=float)
    if chi.ndim != 2 or chi.shape[0] != chi.shape[1]:
        raise ValueError("chi must be a square matrix")
    if not 0 < cutoff < 1:
        raise ValueError("cutoff must lie in (0, 1)")
    j, k = np.triu_indices(chi.shape[0], 1)
    keep = chi[j, k] > cutoff
    return ClusterGraph(chi.shape[0], np.column_stack([j[keep], k[keep]]))


def _pair_gaps(gamma):
    j, k = np.triu_indices(len(gamma), 1)
    return j, k, np.abs(gamma[j] - gamma[k])


def homogeneity_delta(gamma_tilde, edge_budget: int) -> float:
    """Largest delta with ``#{pairs : |g_j - g_k| < delta} < edge_budget``.

    The count is a step function of delta that jumps just after each distinct
    pairwise gap, so the supremum is the ``edge_budget``-th smallest gap.
    """
    gamma = np.asarray(gamma_tilde, dtype=float)
    _, _, gaps = _pair_gaps(gamma)
    if edge_budget < 1:
        raise ValueError("edge_budget must be positive")
    if edge_budget > len(gaps):
        return np.inf
    return float(np.sort(gaps)[edge_budget - 1])


def build_graph_homogeneity(gamma_tilde, delta: Optional[float] = None,
                            edge_budget: Optional[int] = None) -> ClusterGraph:
    """Link clusters whose initial shape estimates are within ``delta``.

    With ``edge_budget`` instead, delta is the largest value keeping the edge
    count strictly below the budget.
    """
    gamma = np.asarray(gamma_tilde, dtype=float).ravel()
    if gamma.size == 0:
        raise ValueError("empty estimate vector")
    if (delta is None) == (edge_budget is None):
        raise ValueError("give exactly one of delta or edge_budget")
    if edge_budget is not None:
        delta = homogeneity_delta(gamma, edge_budget)
    if not delta > 0:
        raise ValueError("delta must be positive")
    j, k, gaps = _pair_gaps(gamma)
    keep = gaps < delta
    return ClusterGraph(len(gamma), np.column_stack([j[keep], k[keep]]))


def write_edge_list(g: ClusterGraph, path, with_weights: bool = False) -> None:
    lines = []
    for (j, k), w in zip(g.edges, g.weights):
        row = f"{j + 1},{k + 1}"
        if with_weights:
            row += f",{float(w):.17g}"
        lines.append(row)
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_edge_list(path, n_vertices: Optional[int] = None) -> ClusterGraph:
    edges, weights = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (2, 3):
            raise ValueError(f"line {lineno}: expected 'j,k[,weight]'")
        j, k = int(parts[0]), int(parts[1])
        if j < 1 or k < 1:
            raise ValueError(f"line {lineno}: indices are 1-based")
        edges.append((j - 1, k - 1))
        weights.append(float(parts[2]) if len(parts) == 3 else 1.0)
    if n_vertices is None:
        n_vertices = max((max(e) for e in edges), default=0) + 1
    return ClusterGraph(n_vertices, np.array(edges, dtype=np.intp).reshape(-1, 2), np.array(weights))


def edges_from_pairs(n_vertices: int, pairs: Sequence[Sequence[int]], one_based: bool = True) -> ClusterGraph:
    e = np.asarray(pairs, dtype=np.intp).reshape(-1, 2)
    if one_based:
        e = e - 1
    return ClusterGraph(n_vertices, e)
