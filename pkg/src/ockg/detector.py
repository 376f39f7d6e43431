"""Online change-point detector over graph node streams.

At clock ``t`` (number of observations seen) each node buffers its last
``2n`` observations ``x_{t-2n}, ..., x_{t-1}``. The forward direction fits the
ratio between the older half (reference) and the newer half (test); the
backward direction swaps them. A pure pre-change/post-change comparison is
therefore scored at ``t = tau + n``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .divergence import ScorePoint, ScoreSeries, pe_divergence
from .graph import Graph
from .kernels import Dictionary, feature_maps, kernel_matrix
from .solver import SolverConfig, cbcgd_solve, learning_rates, moments_from_features

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Hyperparams:
    alpha: float
    sigma: float
    lam: float
    gamma: float

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        for name in ("sigma", "lam", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass
class _Direction:
    params: Hyperparams
    dictionary: Dictionary
    theta: np.ndarray
    config: SolverConfig
    reversed: bool

    def offer(self, points: np.ndarray) -> None:
        """Run the coherence rule on each node's newest observation, in node
        order, keeping the coefficient columns aligned with the centers."""
        D = self.dictionary
        # most points are rejected; only re-test the ones that pass against
        # the pre-update dictionary
        coh = kernel_matrix(points, D.centers, D.sigma).max(axis=1)
        for v in np.flatnonzero(coh <= D.mu0):
            inserted, evicted = D.update(points[v])
            if inserted:
                self.theta = np.hstack([self.theta, np.zeros((self.theta.shape[0], 1))])
            if evicted is not None:
                self.theta = np.delete(self.theta, evicted, axis=1)


@dataclass
class DetectionResult:
    tau_hat: int | None
    affected: set[int]
    series: ScoreSeries
    unconverged_steps: int = 0
    extra: dict = field(default_factory=dict)


class OCKGDetector:
    """Online detector; feed one ``(N, d)`` observation per call to :meth:`step`.

    Parameters
    ----------
    graph : Graph
        Node graph. Pass ``graph.without_edges()`` for the graph-free baseline.
    n : int
        Window size.
    forward, backward : Hyperparams
        Per-direction ``(alpha, sigma, lambda, gamma)``.
    dictionaries : (Dictionary, Dictionary)
        Initial dictionaries for the two directions; they are copied, and their
        ``sigma`` must match the direction's kernel width.
    eta, eta_nodes : float, array
        Global and per-node alarm thresholds. ``eta=inf`` disables alarms.
    stride : int
        Score every ``stride`` steps once the buffers are full.
    t0 : int
        Clock value before the first observation (for streams that do not
        start at time zero).
    """

    def __init__(self, graph: Graph, n: int, forward: Hyperparams, backward: Hyperparams,
                 dictionaries: tuple[Dictionary, Dictionary], eta: float = math.inf,
                 eta_nodes=None, stride: int = 1, tol: float | None = None,
                 max_cycles: int = 10_000, t0: int = 0):
        if n < 2:
            raise ValueError("window size n must be at least 2")
        if stride < 1:
            raise ValueError("stride must be at least 1")
        self.graph = graph
        self.n = int(n)
        self.stride = int(stride)
        self.eta = float(eta)
        N = graph.n_nodes
        if eta_nodes is None:
            eta_nodes = np.zeros(N)
        self.eta_nodes = np.broadcast_to(np.asarray(eta_nodes, dtype=float), (N,)).copy()

        dims = {D.dim for D in dictionaries}
        if len(dims) != 1:
            raise ValueError("dictionaries disagree on the data dimension")
        self.dim = dims.pop()

        self._dirs = []
        for params, D, rev in ((forward, dictionaries[0], False), (backward, dictionaries[1], True)):
            if not math.isclose(D.sigma, params.sigma, rel_tol=1e-12):
                raise ValueError(f"dictionary sigma {D.sigma} != hyperparameter sigma {params.sigma}")
            cfg = SolverConfig(params.alpha, params.lam, params.gamma, tol=tol, max_cycles=max_cycles)
            self._dirs.append(_Direction(params, D.copy(), np.zeros((N, len(D))), cfg, rev))

        self._buf = np.zeros((N, 2 * self.n, self.dim))
        self._head = 0
        self._seen = 0
        self.t = int(t0)

    @property
    def dictionaries(self) -> tuple[Dictionary, Dictionary]:
        return self._dirs[0].dictionary, self._dirs[1].dictionary

    @property
    def thetas(self) -> tuple[np.ndarray, np.ndarray]:
        return self._dirs[0].theta, self._dirs[1].theta

    def windows(self) -> tuple[np.ndarray, np.ndarray]:
        """Current (reference, test) windows in time order, each (N, n, d)."""
        if self._seen < 2 * self.n:
            raise RuntimeError("buffers are not full yet")
        order = (self._head + np.arange(2 * self.n)) % (2 * self.n)
        buf = self._buf[:, order]
        return buf[:, :self.n], buf[:, self.n:]

    def step(self, x) -> ScorePoint | None:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1 and self.dim == 1:
            x = x[:, None]
        if x.shape != (self.graph.n_nodes, self.dim):
            raise ValueError(f"expected observation of shape {(self.graph.n_nodes, self.dim)}, "
                             f"got {x.shape}")
        self._buf[:, self._head] = x
        self._head = (self._head + 1) % (2 * self.n)
        self._seen += 1
        self.t += 1
        for d in self._dirs:
            d.offer(x)

        if self._seen < 2 * self.n or (self._seen - 2 * self.n) % self.stride:
            return None
        return self._score()

    def _score(self) -> ScorePoint:
        ref, test = self.windows()
        both = np.concatenate([ref, test], axis=1)
        pes = []
        converged = True
        for d in self._dirs:
            phi = feature_maps(both, d.dictionary.centers, d.dictionary.sigma)
            older, newer = phi[:, :self.n], phi[:, self.n:]
            m = moments_from_features(newer, older) if d.reversed else moments_from_features(older, newer)
            rates, _ = learning_rates(m, self.graph, d.config)
            res = cbcgd_solve(d.theta, m, self.graph, d.config, rates=rates)
            if not res.converged:
                log.debug("t=%d: solver stopped after %d cycles without converging", self.t, res.cycles)
                converged = False
            d.theta = res.theta
            pes.append(pe_divergence(res.theta, m, d.params.alpha))
        return ScorePoint.from_estimates(self.t, pes[0], pes[1], converged)

    def check_alarm(self, point: ScorePoint) -> tuple[int, set[int]] | None:
        return check_alarm(point, self.eta, self.eta_nodes)

    def run(self, stream) -> DetectionResult:
        """Feed a (T, N, d) array; return the first alarm and the full series."""
        stream = np.asarray(stream, dtype=float)
        if stream.ndim == 2:
            stream = stream[..., None]
        if stream.shape[0] < 2 * self.n - self._seen:
            raise ValueError(f"stream of length {stream.shape[0]} is shorter than 2n={2 * self.n}")
        points = []
        tau_hat, affected = None, set()
        for x in stream:
            p = self.step(x)
            if p is None:
                continue
            points.append(p)
            if tau_hat is None:
                alarm = self.check_alarm(p)
                if alarm is not None:
                    tau_hat, affected = alarm
        series = ScoreSeries.from_points(points, self.graph.n_nodes)
        unconverged = int((~series.converged).sum())
        if unconverged:
            log.warning("solver hit max_cycles on %d of %d scored steps", unconverged, len(series))
        return DetectionResult(tau_hat, affected, series, unconverged)


def check_alarm(point: ScorePoint, eta: float, eta_nodes) -> tuple[int, set[int]] | None:
    """Alarm when the global score reaches ``eta``; flag nodes above their threshold."""
    if point.global_score >= eta:
        eta_nodes = np.broadcast_to(np.asarray(eta_nodes, dtype=float), point.node_scores.shape)
        return point.time, {int(v) for v in np.flatnonzero(point.node_scores > eta_nodes)}
    return None
