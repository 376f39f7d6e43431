import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ockg.graph import Graph, build_graph, laplacian
from ockg.solver import (Moments, SolverConfig, assemble_system, bound_for, cbcgd_cycle, cbcgd_solve,
                         compute_moments, direct_solve, gradient, iteration_bound, learning_rates,
                         lipschitz_constants, moments_from_features, node_loss, node_losses, objective)
from ockg.kernels import gaussian_kernel

from conftest import random_connected_graph, random_moments


def _scalar_moments(h=1.0, hp=1.0, hpv=1.0):
    return Moments(np.array([[[h]]]), np.array([[[hp]]]), np.array([[hpv]]))


# -- moments -------------------------------------------------------------------

def test_moments_single_point():
    c = math.exp(-0.5)
    m = compute_moments([[1.0]], [[1.0]], np.array([[0.0]]), 1.0)
    assert m.H[0, 0, 0] == pytest.approx(c * c, rel=1e-15)
    assert m.hp[0, 0] == pytest.approx(c, rel=1e-15)


def test_moments_identical_windows(rng):
    X = rng.standard_normal((3, 10, 2))
    m = compute_moments(X, X, rng.standard_normal((4, 2)), 0.9)
    assert np.array_equal(m.H, m.Hp)


def test_moments_bruteforce(rng):
    ref, test = rng.standard_normal((12, 2)), rng.standard_normal((12, 2))
    C = rng.standard_normal((5, 2))
    m = compute_moments(ref, test, C, 0.7)
    phi = lambda x: np.array([gaussian_kernel(x, c, 0.7) for c in C])
    H = sum(np.outer(phi(x), phi(x)) for x in ref) / 12
    Hp = sum(np.outer(phi(x), phi(x)) for x in test) / 12
    hp = sum(phi(x) for x in test) / 12
    assert np.abs(m.H[0] - H).max() <= 1e-12
    assert np.abs(m.Hp[0] - Hp).max() <= 1e-12
    assert np.abs(m.hp[0] - hp).max() <= 1e-12


def test_moments_errors():
    with pytest.raises(ValueError):
        compute_moments(np.zeros((0, 2)), np.zeros((3, 2)), np.zeros((1, 2)), 1.0)
    with pytest.raises(ValueError):
        compute_moments(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((1, 3)), 1.0)


# -- losses and objective ----------------------------------------------------------

def test_node_loss_examples():
    assert node_loss(np.zeros(3), np.eye(3), np.eye(3), np.ones(3), 0.3) == 0.0
    for a in (0.0, 0.1, 0.7):
        assert node_loss([1.0], [[1.0]], [[1.0]], [1.0], a) == -0.5
    with pytest.raises(ValueError):
        node_loss(np.zeros(2), np.eye(3), np.eye(3), np.ones(3), 0.1)


def test_node_loss_loop_oracle(rng):
    m = random_moments(1, 5, rng)
    th = rng.standard_normal(5)
    a = 0.2
    quad = sum(th[i] * ((1 - a) * m.H[0, i, j] + a * m.Hp[0, i, j]) * th[j]
               for i in range(5) for j in range(5))
    lin = sum(m.hp[0, i] * th[i] for i in range(5))
    assert node_loss(th, m.H[0], m.Hp[0], m.hp[0], a) == pytest.approx(quad / 2 - lin, rel=1e-12)


def test_objective_zero_and_edgeless(rng):
    m = random_moments(4, 3, rng)
    g = random_connected_graph(4, rng)
    cfg = SolverConfig(0.1, 0.5, 0.2)
    assert objective(np.zeros((4, 3)), m, g, cfg) == 0.0
    th = rng.standard_normal((4, 3))
    e = Graph(4)
    tiny = SolverConfig(0.1, 0.5, 1e-300)
    assert objective(th, m, e, tiny) == pytest.approx(node_losses(th, m, 0.1).sum() / 4, rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_objective_forms_agree(seed):
    rng = np.random.default_rng(seed)
    N, L = int(rng.integers(1, 8)), int(rng.integers(1, 6))
    g = random_connected_graph(N, rng)
    m = random_moments(N, L, rng)
    cfg = SolverConfig(float(rng.uniform(0, 0.9)), float(rng.uniform(1e-3, 2)), float(rng.uniform(1e-3, 1)))
    th = rng.standard_normal((N, L))
    A, b = assemble_system(m, g, cfg)
    x = th.reshape(-1)
    assert objective(th, m, g, cfg) == pytest.approx(0.5 * x @ A @ x - x @ b, rel=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradient_central_differences(seed):
    rng = np.random.default_rng(seed)
    N, L = int(rng.integers(1, 7)), int(rng.integers(1, 5))
    g = random_connected_graph(N, rng)
    m = random_moments(N, L, rng)
    cfg = SolverConfig(0.1, float(rng.uniform(1e-2, 1)), float(rng.uniform(1e-2, 1)))
    th = rng.standard_normal((N, L))
    G = gradient(th, m, g, cfg)
    h = 1e-5
    fd = np.zeros_like(th)
    for idx in np.ndindex(th.shape):
        e = np.zeros_like(th)
        e[idx] = h
        fd[idx] = (objective(th + e, m, g, cfg) - objective(th - e, m, g, cfg)) / (2 * h)
    assert np.linalg.norm(G - fd) <= 1e-5 * max(np.linalg.norm(G), 1e-8)


def test_system_positive_definite(rng):
    for _ in range(20):
        N, L = int(rng.integers(2, 8)), int(rng.integers(1, 6))
        g = random_connected_graph(N, rng)
        cfg = SolverConfig(0.1, float(rng.uniform(1e-3, 1)), float(rng.uniform(1e-3, 1)))
        A, _ = assemble_system(random_moments(N, L, rng), g, cfg)
        assert np.linalg.eigvalsh(A)[0] >= cfg.lam * cfg.gamma * (1 - 1e-9)


def test_dense_guard():
    m = Moments(np.zeros((1, 4001, 4001)), np.zeros((1, 4001, 4001)), np.zeros((1, 4001)))
    with pytest.raises(ValueError):
        assemble_system(m, Graph(1), SolverConfig(0.1, 1.0, 1.0))


# -- step sizes -----------------------------------------------------------------

def test_learning_rate_examples():
    m = _scalar_moments(2.0, 2.0, 1.0)
    r, fb = learning_rates(m, Graph(1), SolverConfig(0.3, 1.0, 1.0))
    assert r[0] == pytest.approx(2.0) and not fb.any()
    # H = H' = I, N = 1, lam d_v = 2  ->  3
    g = build_graph([(0, 1, 2.0)])
    m = Moments(np.stack([np.eye(3)] * 2), np.stack([np.eye(3)] * 2), np.zeros((2, 3)))
    r, _ = learning_rates(m, g, SolverConfig(0.1, 1.0, 1.0))
    # N = 2 here, so the data part is 1/2
    assert r == pytest.approx([2.5, 2.5])
    m1 = Moments(np.eye(3)[None], np.eye(3)[None], np.zeros((1, 3)))
    r1, _ = learning_rates(m1, Graph(1), SolverConfig(0.1, 1.0, 1.0))
    assert r1[0] == pytest.approx(1.0)


def test_learning_rates_eig_oracle(rng):
    N, L = 6, 5
    g = random_connected_graph(N, rng)
    m = random_moments(N, L, rng)
    cfg = SolverConfig(0.2, 0.3, 0.1)
    r, _ = learning_rates(m, g, cfg)
    for v in range(N):
        B = ((1 - cfg.alpha) * m.H[v] + cfg.alpha * m.Hp[v]) / N + cfg.lam * g.degrees[v] * np.eye(L)
        assert r[v] == pytest.approx(np.linalg.eigvalsh(B)[-1], rel=1e-6)


# -- CBCGD ------------------------------------------------------------------

def test_cycle_hand_arithmetic():
    m = _scalar_moments()
    out = cbcgd_cycle(np.zeros((1, 1)), m, Graph(1), SolverConfig(0.3, 1.0, 1.0), np.array([1.0]))
    assert out[0, 0] == pytest.approx(0.5)


def _cycle_oracle(th, m, g, cfg, rates):
    """Literal transcription of the block update, node by node."""
    th = th.copy()
    N = g.n_nodes
    W = g.adjacency
    for v in range(N):
        old = th[v].copy()
        gv = ((1 - cfg.alpha) * m.H[v] + cfg.alpha * m.Hp[v]) @ old / N - m.hp[v] / N
        nb = sum(W[v, u] * th[u] for u in range(N) if W[v, u] > 0)
        th[v] = (rates[v] * old - gv - cfg.lam * (g.degrees[v] * old - nb)) / (rates[v] + cfg.lam * cfg.gamma)
    return th


def test_cycle_matches_transcription(rng):
    for _ in range(10):
        N, L = int(rng.integers(2, 9)), int(rng.integers(1, 6))
        g = random_connected_graph(N, rng)
        m = random_moments(N, L, rng)
        cfg = SolverConfig(0.1, 0.7, 0.05)
        rates, _ = learning_rates(m, g, cfg)
        th = rng.standard_normal((N, L))
        assert np.allclose(cbcgd_cycle(th, m, g, cfg, rates), _cycle_oracle(th, m, g, cfg, rates),
                           rtol=1e-12, atol=1e-13)


def test_fixed_point(rng):
    N, L = 6, 4
    g = random_connected_graph(N, rng)
    m = random_moments(N, L, rng)
    cfg = SolverConfig(0.1, 0.5, 0.2)
    star = direct_solve(m, g, cfg)
    rates, _ = learning_rates(m, g, cfg)
    assert np.abs(cbcgd_cycle(star, m, g, cfg, rates) - star).max() <= 1e-10
    res = cbcgd_solve(star, m, g, cfg)
    assert res.converged and res.cycles == 1


def test_pool_cycle_is_per_node(rng):
    N, L = 5, 3
    m = random_moments(N, L, rng)
    cfg = SolverConfig(0.1, 0.8, 0.3)
    rates, _ = learning_rates(m, Graph(N), cfg)
    th = rng.standard_normal((N, L))
    joint = cbcgd_cycle(th, m, Graph(N), cfg, rates)
    for v in range(N):
        mv = Moments(m.H[v:v + 1], m.Hp[v:v + 1], m.hp[v:v + 1])
        # one-node problem with the same 1/N weighting: scale the moments
        mv = Moments(mv.H / N, mv.Hp / N, mv.hp / N)
        single = cbcgd_cycle(th[v:v + 1], mv, Graph(1), cfg, rates[v:v + 1])
        assert np.allclose(joint[v], single[0], rtol=1e-13)


def test_objective_non_increasing(rng):
    for _ in range(100):
        N, L = int(rng.integers(1, 11)), int(rng.integers(1, 9))
        g = random_connected_graph(N, rng)
        m = random_moments(N, L, rng)
        cfg = SolverConfig(0.1, float(rng.uniform(1e-3, 1)), float(rng.uniform(1e-3, 1)), max_cycles=200)
        res = cbcgd_solve(np.zeros((N, L)), m, g, cfg, record_trace=True)
        obj = [0.0] + [t[1] for t in res.trace]
        assert all(b <= a + 1e-12 * max(1.0, abs(a)) for a, b in zip(obj, obj[1:]))


def test_direct_solve_scalar():
    for g in (0.5, 2.0):
        th = direct_solve(_scalar_moments(), Graph(1), SolverConfig(0.3, 1.0, g))
        assert th[0, 0] == pytest.approx(1 / (1 + g))


def test_direct_residual(rng):
    N, L = 7, 4
    g = random_connected_graph(N, rng)
    m = random_moments(N, L, rng)
    cfg = SolverConfig(0.1, 0.4, 0.05)
    A, b = assemble_system(m, g, cfg)
    x = direct_solve(m, g, cfg).reshape(-1)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_direct_solve_rejects_corrupt():
    m = Moments(-np.ones((1, 1, 1)) * 100, -np.ones((1, 1, 1)) * 100, np.ones((1, 1)))
    with pytest.raises(np.linalg.LinAlgError):
        direct_solve(m, Graph(1), SolverConfig(0.1, 1.0, 1e-3))


def test_warm_start_same_minimizer(rng):
    N, L = 8, 5
    g = random_connected_graph(N, rng)
    m = random_moments(N, L, rng)
    cfg = SolverConfig(0.1, 0.3, 0.1, tol=1e-12, max_cycles=100_000)
    a = cbcgd_solve(np.zeros((N, L)), m, g, cfg)
    b = cbcgd_solve(rng.standard_normal((N, L)) * 5, m, g, cfg)
    fa, fb = objective(a.theta, m, g, cfg), objective(b.theta, m, g, cfg)
    assert abs(fa - fb) <= 1e-6 * abs(fa)


def test_max_cycles_flag(rng):
    g = random_connected_graph(5, rng)
    m = random_moments(5, 3, rng)
    res = cbcgd_solve(np.zeros((5, 3)), m, g, SolverConfig(0.1, 1.0, 1e-5, tol=1e-300, max_cycles=3))
    assert not res.converged and res.cycles == 3


def test_config_validation():
    for bad in [dict(alpha=1.0), dict(alpha=-0.1), dict(lam=0.0), dict(gamma=0.0), dict(tol=0.0),
                dict(max_cycles=0), dict(max_cycles=100_001)]:
        kw = dict(alpha=0.1, lam=1.0, gamma=1.0)
        kw.update(bad)
        with pytest.raises(ValueError):
            SolverConfig(**kw)
    assert SolverConfig(0.1, 1.0, 1.0).tolerance(4, 25) == pytest.approx(1e-5)


# -- iteration bound ------------------------------------------------------------

def test_iteration_bound_examples():
    assert iteration_bound(1.0, 1.0, 1.0, 1.0, 2, 2, 1.0, 1.0) == 0
    # (2 + 16 ln^2 12) / 2 * ln(e), rounded up
    expected = math.ceil((2 + 16 * math.log(12) ** 2) / 2)
    assert expected == 51
    assert iteration_bound(1.0, 1.0, 1.0, 1.0, 2, 2, math.e, 1.0) == expected
    with pytest.raises(ValueError):
        iteration_bound(1.0, 1.0, 1.0, 1.0, 2, 1, 2.0, 1.0)
    with pytest.raises(ValueError):
        iteration_bound(1.0, 1.0, 1.0, 1.0, 2, 2, 2.0, 0.0)


def test_lipschitz_constants_oracle(rng):
    N, L = 5, 3
    g = random_connected_graph(N, rng)
    m = random_moments(N, L, rng)
    cfg = SolverConfig(0.1, 0.5, 0.3)
    M, M_min = lipschitz_constants(m, g, cfg)
    A, _ = assemble_system(m, g, cfg)
    assert M == pytest.approx(np.linalg.eigvalsh(A - cfg.lam * cfg.gamma * np.eye(N * L))[-1], rel=1e-10)
    rates, _ = learning_rates(m, g, cfg)
    assert M_min == pytest.approx(rates.min(), rel=1e-6)
    assert M_min <= M * (1 + 1e-9)


def test_cycles_within_bound(rng):
    for _ in range(20):
        N, L = int(rng.integers(2, 8)), int(rng.integers(2, 6))
        g = random_connected_graph(N, rng)
        m = random_moments(N, L, rng)
        cfg = SolverConfig(0.1, float(rng.uniform(1e-2, 1)), float(rng.uniform(1e-2, 1)), max_cycles=100_000)
        star = objective(direct_solve(m, g, cfg), m, g, cfg)
        eps = 1e-6 * (0.0 - star)
        b = bound_for(m, g, cfg, np.zeros((N, L)), eps)
        res = cbcgd_solve(np.zeros((N, L)), m, g, cfg, objective_target=star + eps)
        assert res.converged and res.cycles <= b.i_max
