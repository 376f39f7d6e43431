import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ockg.graph import (Graph, GraphError, build_graph, laplacian, read_edgelist, sample_barabasi_albert,
                        sample_sbm, sbm_clusters, select_affected_ball, select_affected_cluster,
                        write_edgelist)

from conftest import random_connected_graph


def test_single_edge_degrees():
    g = build_graph([(0, 1, 1.0)], n_nodes=2)
    assert g.degrees.tolist() == [1.0, 1.0]


def test_triangle():
    g = build_graph([(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)])
    assert g.degrees.tolist() == [2.0, 2.0, 2.0]
    Lap = laplacian(g)
    assert np.array_equal(np.diag(Lap), [2.0, 2.0, 2.0])
    assert np.array_equal(Lap[~np.eye(3, dtype=bool)], -np.ones(6))


@pytest.mark.parametrize("edges", [
    [(0, 0, 1.0)],                  # self-loop
    [(0, 1, 0.0)],                  # non-positive weight
    [(0, 1, -1.0)],
    [(0, 1, 1.0), (1, 0, 2.0)],     # duplicate undirected edge
    [(0, 5, 1.0)],                  # out of range
])
def test_invalid_edges(edges):
    with pytest.raises(GraphError):
        Graph(3, edges)


def test_two_node_laplacian():
    g = build_graph([(0, 1, 2.5)])
    assert np.array_equal(laplacian(g), [[2.5, -2.5], [-2.5, 2.5]])


def test_edgeless_laplacian():
    assert not laplacian(Graph(4)).any()


def test_without_edges_keeps_nodes():
    g = build_graph([(0, 1, 1.0), (1, 2, 1.0)])
    p = g.without_edges()
    assert p.n_nodes == 3 and p.n_edges == 0 and p.mean_degree == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_laplacian_properties(N, seed):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(N, rng)
    Lap = laplacian(g)
    assert np.allclose(Lap, Lap.T)
    assert np.abs(Lap.sum(axis=1)).max() < 1e-12
    # d_v is the adjacency row sum
    assert np.allclose(g.degrees, g.adjacency.sum(axis=1))
    x = rng.standard_normal(N)
    W = g.adjacency
    pairwise = 0.5 * sum(W[u, v] * (x[u] - x[v]) ** 2 for u in range(N) for v in range(N))
    assert x @ Lap @ x == pytest.approx(pairwise, rel=1e-10, abs=1e-12)
    ev = np.linalg.eigvalsh(Lap)
    assert ev[0] == pytest.approx(0.0, abs=1e-10) and ev.min() > -1e-10


def test_csr_matches_dense(rng):
    g = random_connected_graph(9, rng)
    for v in range(9):
        nb = g.indices[g.indptr[v]:g.indptr[v + 1]]
        w = g.weights[g.indptr[v]:g.indptr[v + 1]]
        assert set(nb.tolist()) == set(np.flatnonzero(g.adjacency[v]).tolist())
        assert np.allclose(w, g.adjacency[v, nb])


def test_sbm_disjoint_limit_rejected():
    # p_in=1, p_out=0 gives two disconnected triangles every time
    with pytest.raises(GraphError):
        sample_sbm([3, 3], 1.0, 0.0, np.random.default_rng(0), max_attempts=5)


def test_sbm_never_connected():
    with pytest.raises(GraphError):
        sample_sbm([3, 3], 0.0, 0.0, np.random.default_rng(0))


def test_sbm_empty_clusters():
    with pytest.raises((GraphError, ValueError)):
        sample_sbm([], 0.5, 0.1, np.random.default_rng(0))


def test_sbm_intra_cluster_edge_mean():
    # binomial mean 0.5 * C(20, 2) = 95 edges per cluster
    rng = np.random.default_rng(1)
    sizes = [20, 20, 20, 20]
    labels = np.repeat(np.arange(4), 20)
    counts = []
    for _ in range(1000):
        g = sample_sbm(sizes, 0.5, 0.01, rng)
        e = g.edges
        same = labels[[u for u, _, _ in e]] == labels[[v for _, v, _ in e]]
        counts.append(same.sum() / 4)
    assert abs(np.mean(counts) - 95) < 3
    assert g.is_connected()


def test_ba_two_nodes():
    g = sample_barabasi_albert(2, np.random.default_rng(0))
    assert [(u, v) for u, v, _ in g.edges] == [(0, 1)]


def test_ba_rejects_small():
    with pytest.raises((GraphError, ValueError)):
        sample_barabasi_albert(1, np.random.default_rng(0))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ba_is_tree(seed):
    g = sample_barabasi_albert(100, np.random.default_rng(seed))
    assert g.n_edges == 99 and g.is_connected()
    assert all(w == 1.0 for _, _, w in g.edges)


def test_ba_heavy_tail():
    rng = np.random.default_rng(2)
    hits = sum(sample_barabasi_albert(100, rng).degrees.max() > 10 for _ in range(100))
    assert hits >= 90


def test_ba_deterministic():
    a = sample_barabasi_albert(50, np.random.default_rng(7))
    b = sample_barabasi_albert(50, np.random.default_rng(7))
    assert a == b and a.digest() == b.digest()


def test_select_cluster():
    assert select_affected_cluster([5], np.random.default_rng(0)) == set(range(5))
    C = select_affected_cluster([20] * 4, np.random.default_rng(0))
    assert len(C) == 20 and C in [set(c) for c in sbm_clusters([20] * 4)]
    assert C == select_affected_cluster([20] * 4, np.random.default_rng(0))


def test_ball_star_and_path():
    star = build_graph([(0, i, 1.0) for i in range(1, 6)])
    assert select_affected_ball(star, 1, np.random.default_rng(0), seed_node=0) == set(range(6))
    path = build_graph([(i, i + 1, 1.0) for i in range(5)])
    assert select_affected_ball(path, 4, np.random.default_rng(0), seed_node=0) == {0, 1, 2, 3, 4}


def test_ball_seed_proportional_to_degree():
    star = build_graph([(0, i, 1.0) for i in range(1, 6)])
    rng = np.random.default_rng(3)
    # radius 0 returns just the seed
    hits = sum(select_affected_ball(star, 0, rng) == {0} for _ in range(10_000))
    assert abs(hits / 10_000 - 0.5) < 0.03


def test_ball_matches_bfs_oracle(rng):
    g = sample_barabasi_albert(60, rng)
    W = g.adjacency > 0
    for seed in range(0, 60, 7):
        # independent BFS over the dense adjacency
        dist = {seed: 0}
        frontier = [seed]
        while frontier:
            nxt = []
            for u in frontier:
                for v in np.flatnonzero(W[u]):
                    if int(v) not in dist:
                        dist[int(v)] = dist[u] + 1
                        nxt.append(int(v))
            frontier = nxt
        expect = {v for v, d in dist.items() if d <= 4}
        assert select_affected_ball(g, 4, rng, seed_node=seed) == expect


def test_edgelist_roundtrip(tmp_path, rng):
    g = random_connected_graph(8, rng)
    clusters = [[0, 1, 2, 3], [4, 5, 6, 7]]
    write_edgelist(g, tmp_path / "g.txt", clusters)
    h, cl = read_edgelist(tmp_path / "g.txt")
    assert h == g and cl == clusters
    g2 = random_connected_graph(5, rng)
    write_edgelist(g2, tmp_path / "h.txt")
    assert read_edgelist(tmp_path / "h.txt")[0] == g2


def test_edgelist_rejects_garbage(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("0 1\n")
    with pytest.raises((GraphError, ValueError)):
        read_edgelist(p)
