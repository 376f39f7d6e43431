"""Synthetic change-point scenarios on random graphs.

Experiments I.a/I.b live on a 4x20 stochastic block model, II.a/II.b on a
100-node Barabasi-Albert tree. Every generator returns a ``(T, N, d)`` stream
and the set of nodes whose law switches at ``tau``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.stats import norm

from .graph import Graph, sample_barabasi_albert, sample_sbm, sbm_clusters, select_affected_ball

RHO = 0.8
UNIFORM_HALF_WIDTH = np.sqrt(3.0)    # Var U(-c, c) = c^2 / 3 = 1
SBM_SIZES = (20, 20, 20, 20)
SBM_P_IN, SBM_P_OUT = 0.5, 0.01
BA_NODES = 100
BALL_RADIUS = 4

DEFAULTS = {
    # experiment: (T, tau, dimension)
    "Ia": (4000, 2000, 2),
    "Ib": (1000, 500, 2),
    "IIa": (2000, 1000, 3),
    "IIb": (4000, 2000, 1),
}


@dataclass
class ScenarioSpec:
    experiment: str
    n: int
    tau: int | None = None
    T: int | None = None
    seed: int = 0
    graph_model: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in DEFAULTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; expected one of {sorted(DEFAULTS)}")
        T, tau, _ = DEFAULTS[self.experiment]
        self.T = T if self.T is None else int(self.T)
        self.tau = tau if self.tau is None else int(self.tau)
        if not self.graph_model:
            if self.experiment.startswith("II"):
                self.graph_model = {"model": "BA", "n": BA_NODES}
            else:
                self.graph_model = {"model": "SBM", "sizes": list(SBM_SIZES),
                                    "p_in": SBM_P_IN, "p_out": SBM_P_OUT}
        self.n = int(self.n)
        if self.n < 2:
            raise ValueError("window size must be at least 2")
        if not 2 * self.n <= self.tau <= self.T - 2 * self.n:
            raise ValueError(f"need 2n <= tau <= T - 2n (n={self.n}, tau={self.tau}, T={self.T})")

    @property
    def dim(self) -> int:
        return DEFAULTS[self.experiment][2]

    def to_json(self) -> dict:
        return {"schema": 1, **asdict(self)}

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioSpec":
        obj = {k: v for k, v in obj.items() if k != "schema"}
        unknown = set(obj) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown scenario keys {sorted(unknown)}")
        if "experiment" not in obj or "n" not in obj:
            raise ValueError("scenario needs 'experiment' and 'n'")
        try:
            return cls(**obj)
        except TypeError as e:
            raise ValueError(f"malformed scenario: {e}") from None

    @classmethod
    def load(cls, path) -> "ScenarioSpec":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def make_graph(spec: ScenarioSpec, rng: np.random.Generator) -> tuple[Graph, list[list[int]] | None]:
    gm = spec.graph_model
    if gm["model"] == "SBM":
        g = sample_sbm(gm["sizes"], gm["p_in"], gm["p_out"], rng)
        return g, sbm_clusters(gm["sizes"])
    if gm["model"] == "BA":
        return sample_barabasi_albert(int(gm["n"]), rng), None
    raise ValueError(f"unknown graph model {gm['model']!r}")


def _cov2(rho: float) -> np.ndarray:
    return np.array([[1.0, rho], [rho, 1.0]])


def gaussian_copula_uniform(size: int, rho: float, half_width: float,
                            rng: np.random.Generator) -> np.ndarray:
    """Bivariate Gaussian copula with correlation ``rho`` and U(-c, c) marginals."""
    z = rng.multivariate_normal(np.zeros(2), _cov2(rho), size=size)
    return half_width * (2.0 * norm.cdf(z) - 1.0)


def gen_Ia(graph: Graph, clusters, tau: int, T: int, rng: np.random.Generator):
    N = graph.n_nodes
    C = set(clusters[int(rng.integers(len(clusters)))])
    stream = rng.multivariate_normal(np.zeros(2), _cov2(RHO), size=(T, N))
    idx = np.array(sorted(C))
    stream[tau:, idx] = gaussian_copula_uniform((T - tau) * len(idx), RHO, UNIFORM_HALF_WIDTH,
                                                rng).reshape(T - tau, len(idx), 2)
    return stream, C


# (pre mean, pre rho) -> (post mean, post rho), per cluster position
IB_SCHEMA = (
    ((0.0, RHO), (0.0, -RHO)),
    ((0.0, RHO), (0.0, 0.0)),
    ((0.0, -RHO), (0.0, 0.0)),
    ((0.0, RHO), (1.0, RHO)),
)


def gen_Ib(graph: Graph, clusters, tau: int, T: int, rng: np.random.Generator):
    if len(clusters) != len(IB_SCHEMA):
        raise ValueError("experiment I.b needs exactly four clusters")
    N = graph.n_nodes
    picked = rng.choice(len(clusters), size=2, replace=False)
    stream = np.empty((T, N, 2))
    C = set()
    for k, members in enumerate(clusters):
        (mu0, rho0), (mu1, rho1) = IB_SCHEMA[k]
        members = np.asarray(members)
        switch = tau if k in picked else T
        stream[:switch, members] = rng.multivariate_normal(
            np.full(2, mu0), _cov2(rho0), size=(switch, len(members)))
        if switch < T:
            stream[switch:, members] = rng.multivariate_normal(
                np.full(2, mu1), _cov2(rho1), size=(T - switch, len(members)))
            C.update(int(v) for v in members)
    return stream, C


def affected_ball(graph: Graph, rng: np.random.Generator, radius: int = BALL_RADIUS,
                  max_attempts: int = 100) -> set[int]:
    """Degree-weighted seed plus its hop ball, redrawn while it covers every node."""
    for _ in range(max_attempts):
        C = select_affected_ball(graph, radius, rng)
        if len(C) < graph.n_nodes:
            return C
    raise ValueError(f"radius-{radius} balls cover the whole graph; cannot build a two-class problem")


def gen_IIa(graph: Graph, tau: int, T: int, rng: np.random.Generator, C: set[int] | None = None):
    N = graph.n_nodes
    if C is None:
        C = affected_ball(graph, rng)
    cov = np.eye(3)
    cov[0, 1] = cov[1, 0] = RHO
    stream = rng.multivariate_normal(np.zeros(3), cov, size=(T, N))
    idx = np.array(sorted(C))
    stream[tau:, idx, 0] += 1.0
    return stream, C


def gen_IIb(graph: Graph, tau: int, T: int, rng: np.random.Generator, C: set[int] | None = None):
    N = graph.n_nodes
    if C is None:
        C = affected_ball(graph, rng)
    stream = rng.standard_normal((T, N, 1))
    idx = np.array(sorted(C))
    stream[tau:, idx] = rng.uniform(-UNIFORM_HALF_WIDTH, UNIFORM_HALF_WIDTH, size=(T - tau, len(idx), 1))
    return stream, C


def generate(spec: ScenarioSpec, graph: Graph, clusters, rng: np.random.Generator):
    """Stream and affected set for one instance of ``spec`` on a fixed graph."""
    if spec.experiment == "Ia":
        return gen_Ia(graph, clusters, spec.tau, spec.T, rng)
    if spec.experiment == "Ib":
        return gen_Ib(graph, clusters, spec.tau, spec.T, rng)
    if spec.experiment == "IIa":
        return gen_IIa(graph, spec.tau, spec.T, rng)
    return gen_IIb(graph, spec.tau, spec.T, rng)


def null_stream(graph: Graph, T: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Stationary standard-normal streams (no change anywhere)."""
    return rng.standard_normal((T, graph.n_nodes, dim))
