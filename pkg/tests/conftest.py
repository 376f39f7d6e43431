import numpy as np
import pytest

from ockg.graph import Graph
from ockg.solver import Moments


def random_connected_graph(N: int, rng: np.random.Generator, extra: float = 0.3,
                           weighted: bool = True) -> Graph:
    """Random spanning tree plus a few extra edges."""
    edges = {}
    order = rng.permutation(N)
    for i in range(1, N):
        u, v = int(order[i]), int(order[rng.integers(i)])
        edges[(min(u, v), max(u, v))] = 1.0
    for u in range(N):
        for v in range(u + 1, N):
            if (u, v) not in edges and rng.random() < extra:
                edges[(u, v)] = 1.0
    return Graph(N, [(u, v, float(rng.uniform(0.5, 2.0)) if weighted else 1.0)
                     for (u, v) in edges])


def random_psd(L: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    B = rng.standard_normal((L, L + 2))
    return scale * B @ B.T / (L + 2)


def random_moments(N: int, L: int, rng: np.random.Generator) -> Moments:
    H = np.stack([random_psd(L, rng) for _ in range(N)])
    Hp = np.stack([random_psd(L, rng) for _ in range(N)])
    hp = rng.standard_normal((N, L))
    return Moments(H, Hp, hp)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
