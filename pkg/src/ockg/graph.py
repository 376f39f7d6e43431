"""Weighted undirected graphs, Laplacians and the random graph models used in
the synthetic experiments (stochastic block model, Barabasi-Albert tree)."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path


class GraphError(ValueError):
    pass


class Graph:
    """Undirected graph with strictly positive edge weights and no self-loops.

    Edges are stored once, as ``(u, v, w)`` with ``u < v``. Dense adjacency,
    degrees and a CSR neighbour structure are computed at construction and
    never modified afterwards.
    """

    def __init__(self, n_nodes: int, edges: Iterable[tuple[int, int, float]] = ()):
        if n_nodes < 1:
            raise GraphError(f"n_nodes must be positive, got {n_nodes}")
        self.n_nodes = int(n_nodes)

        seen = set()
        canon = []
        for u, v, w in edges:
            u, v, w = int(u), int(v), float(w)
            if not (0 <= u < n_nodes and 0 <= v < n_nodes):
                raise GraphError(f"edge ({u}, {v}) out of range for {n_nodes} nodes")
            if u == v:
                raise GraphError(f"self-loop at node {u}")
            if not w > 0:
                raise GraphError(f"edge ({u}, {v}) has non-positive weight {w}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise GraphError(f"duplicate edge {key}")
            seen.add(key)
            canon.append((key[0], key[1], w))
        canon.sort()
        self.edges: tuple[tuple[int, int, float], ...] = tuple(canon)

        adj = np.zeros((n_nodes, n_nodes))
        for u, v, w in self.edges:
            adj[u, v] = adj[v, u] = w
        adj.setflags(write=False)
        self.adjacency = adj
        self.degrees = adj.sum(axis=1)
        self.degrees.setflags(write=False)

        sp = csr_matrix(adj)
        self.indptr = sp.indptr.astype(np.int64)
        self.indices = sp.indices.astype(np.int64)
        self.weights = sp.data.astype(np.float64)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def mean_degree(self) -> float:
        return float(self.degrees.mean())

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def is_connected(self) -> bool:
        n_comp, _ = connected_components(csr_matrix(self.adjacency), directed=False)
        return n_comp == 1

    def hop_distances(self, source: int) -> np.ndarray:
        """Unweighted shortest-path distances from ``source`` (inf if unreachable)."""
        return shortest_path(csr_matrix(self.adjacency), directed=False,
                             unweighted=True, indices=source)

    def without_edges(self) -> "Graph":
        """Same node set, no edges. Used for the graph-free (Pool) baseline."""
        return Graph(self.n_nodes)

    def digest(self) -> str:
        h = hashlib.sha256(str(self.n_nodes).encode())
        for u, v, w in self.edges:
            h.update(f"{u} {v} {w!r};".encode())
        return h.hexdigest()[:16]

    def __repr__(self) -> str:
        return f"Graph(n_nodes={self.n_nodes}, n_edges={self.n_edges})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Graph) and self.n_nodes == other.n_nodes and self.edges == other.edges

    __hash__ = None


def build_graph(edges: Iterable[tuple[int, int, float]], n_nodes: int | None = None) -> Graph:
    edges = list(edges)
    if n_nodes is None:
        if not edges:
            raise GraphError("cannot infer node count from an empty edge list")
        n_nodes = 1 + max(max(int(u), int(v)) for u, v, _ in edges)
    return Graph(n_nodes, edges)


def laplacian(g: Graph) -> np.ndarray:
    """Combinatorial Laplacian ``diag(d) - W`` as a dense array."""
    return np.diag(g.degrees) - g.adjacency


# -- random graph models -----------------------------------------------------

def sample_sbm(cluster_sizes: Sequence[int], p_in: float, p_out: float,
               rng: np.random.Generator, max_attempts: int = 100) -> Graph:
    """Stochastic block model with unit weights, resampled until connected."""
    if len(cluster_sizes) == 0:
        raise GraphError("cluster_sizes is empty")
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise GraphError("connection probabilities must lie in [0, 1]")
    labels = np.repeat(np.arange(len(cluster_sizes)), cluster_sizes)
    n = labels.size
    iu, ju = np.triu_indices(n, k=1)
    probs = np.where(labels[iu] == labels[ju], p_in, p_out)
    for _ in range(max_attempts):
        keep = rng.random(probs.size) < probs
        g = Graph(n, [(int(u), int(v), 1.0) for u, v in zip(iu[keep], ju[keep])])
        if g.is_connected():
            return g
    raise GraphError(f"no connected SBM sample after {max_attempts} attempts")


def sbm_clusters(cluster_sizes: Sequence[int]) -> list[list[int]]:
    bounds = np.cumsum([0, *cluster_sizes])
    return [list(range(bounds[i], bounds[i + 1])) for i in range(len(cluster_sizes))]


def sample_barabasi_albert(n: int, rng: np.random.Generator) -> Graph:
    """Preferential-attachment tree: node ``i`` links to one earlier node
    chosen with probability proportional to its current degree."""
    if n < 2:
        raise GraphError("Barabasi-Albert model needs n >= 2")
    deg = np.zeros(n)
    edges = []
    for i in range(1, n):
        current = deg[:i]
        total = current.sum()
        if total == 0:
            # all degrees tied at zero: uniform choice
            target = int(rng.integers(i))
        else:
            target = int(rng.choice(i, p=current / total))
        edges.append((target, i, 1.0))
        deg[target] += 1
        deg[i] += 1
    return Graph(n, edges)


def select_affected_cluster(cluster_sizes: Sequence[int], rng: np.random.Generator) -> set[int]:
    clusters = sbm_clusters(cluster_sizes)
    return set(clusters[int(rng.integers(len(clusters)))])


def select_affected_ball(g: Graph, radius: int, rng: np.random.Generator,
                         seed_node: int | None = None) -> set[int]:
    """Seed node drawn proportionally to degree, plus every node within
    ``radius`` hops of it."""
    if seed_node is None:
        p = g.degrees / g.degrees.sum()
        seed_node = int(rng.choice(g.n_nodes, p=p))
    dist = g.hop_distances(seed_node)
    return {int(v) for v in np.flatnonzero(dist <= radius)}


# -- serialization -----------------------------------------------------------

def write_edgelist(g: Graph, path: str | Path, clusters: Sequence[Sequence[int]] | None = None) -> None:
    path = Path(path)
    with open(path, "w") as fh:
        for u, v, w in g.edges:
            fh.write(f"{u} {v} {w!r}\n")
    sidecar = {"schema": 1, "n": g.n_nodes}
    if clusters is not None:
        sidecar["clusters"] = [list(map(int, c)) for c in clusters]
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def read_edgelist(path: str | Path) -> tuple[Graph, list[list[int]] | None]:
    path = Path(path)
    sidecar_path = path.with_suffix(".json")
    meta = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
    edges = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise GraphError(f"{path}:{lineno}: expected 'u v w'")
        edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
    n = meta.get("n")
    return build_graph(edges, n), meta.get("clusters")
