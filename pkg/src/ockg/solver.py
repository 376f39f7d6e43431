"""Joint estimation of the per-node relative likelihood-ratio coefficients.

The problem solved at every time step is the strongly convex quadratic

    Phi(Theta) = (1/N) sum_v l_v(theta_v)
                 + (lam/2) [ sum_{u<v} w_uv ||theta_u - theta_v||^2 + gamma sum_v ||theta_v||^2 ]

with l_v(theta) = (1-alpha) theta'H_v theta/2 + alpha theta'H'_v theta/2 - h'_v'theta.
``cbcgd_solve`` minimises it by cyclic block (one block per node) proximal
gradient steps; ``direct_solve`` is the dense closed-form reference.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.linalg import cho_factor, cho_solve

from .graph import Graph, laplacian
from .kernels import feature_maps

log = logging.getLogger(__name__)

DENSE_SIZE_LIMIT = 4000
HARD_CYCLE_CAP = 100_000


@dataclass
class Moments:
    """Empirical moments per node.

    H  : (N, L, L) second moment of the reference window
    Hp : (N, L, L) second moment of the test window
    hp : (N, L)    first moment of the test window
    """
    H: np.ndarray
    Hp: np.ndarray
    hp: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.H.shape[0]

    @property
    def size(self) -> int:
        return self.H.shape[1]


def moments_from_features(phi_ref: np.ndarray, phi_test: np.ndarray) -> Moments:
    """Moments from precomputed features of shape (N, n, L)."""
    if phi_ref.shape[1] == 0 or phi_test.shape[1] == 0:
        raise ValueError("empty window")
    H = np.einsum("vil,vim->vlm", phi_ref, phi_ref) / phi_ref.shape[1]
    Hp = np.einsum("vil,vim->vlm", phi_test, phi_test) / phi_test.shape[1]
    hp = phi_test.mean(axis=1)
    return Moments(H, Hp, hp)


def compute_moments(ref_window, test_window, centers, sigma: float) -> Moments:
    """Moments of the reference/test windows against a dictionary.

    Windows are (N, n, d) arrays (one window per node) or a single (n, d)
    window, which is treated as a one-node graph.
    """
    ref = np.asarray(ref_window, dtype=float)
    test = np.asarray(test_window, dtype=float)
    if ref.ndim == 2:
        ref, test = ref[None], test[None]
    if ref.shape[1] == 0 or test.shape[1] == 0:
        raise ValueError("empty window")
    return moments_from_features(feature_maps(ref, centers, sigma),
                                 feature_maps(test, centers, sigma))


@dataclass
class SolverConfig:
    alpha: float
    lam: float
    gamma: float
    tol: float | None = None        # None: 1e-6 * sqrt(N L)
    max_cycles: int = 10_000

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.tol is not None and not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 1 <= self.max_cycles <= HARD_CYCLE_CAP:
            raise ValueError(f"max_cycles must lie in [1, {HARD_CYCLE_CAP}]")

    def tolerance(self, n_nodes: int, size: int) -> float:
        return self.tol if self.tol is not None else 1e-6 * math.sqrt(n_nodes * size)


def _curvature(m: Moments, alpha: float) -> np.ndarray:
    # per-node Hessian of l_v, before the 1/N factor
    return (1.0 - alpha) * m.H + alpha * m.Hp


# -- objective ---------------------------------------------------------------

def node_loss(theta, H, Hp, hp, alpha: float, n_nodes: int = 1) -> float:
    """``l_v(theta) / n_nodes``."""
    theta = np.asarray(theta, dtype=float)
    H, Hp, hp = np.asarray(H, float), np.asarray(Hp, float), np.asarray(hp, float)
    L = theta.shape[0]
    if H.shape != (L, L) or Hp.shape != (L, L) or hp.shape != (L,):
        raise ValueError("shape mismatch between theta and moments")
    val = (1.0 - alpha) * theta @ H @ theta / 2 + alpha * theta @ Hp @ theta / 2 - hp @ theta
    return float(val) / n_nodes


def node_losses(Theta: np.ndarray, m: Moments, alpha: float) -> np.ndarray:
    """Vector of unnormalised per-node losses ``l_v(theta_v)``."""
    quad = np.einsum("vl,vlm,vm->v", Theta, _curvature(m, alpha), Theta)
    return quad / 2 - np.einsum("vl,vl->v", m.hp, Theta)


def _check_shapes(Theta: np.ndarray, m: Moments, g: Graph) -> None:
    if Theta.shape != (g.n_nodes, m.size) or m.n_nodes != g.n_nodes:
        raise ValueError(f"shape mismatch: Theta {Theta.shape}, graph N={g.n_nodes}, "
                         f"moments ({m.n_nodes}, {m.size})")


def objective(Theta, m: Moments, g: Graph, cfg: SolverConfig) -> float:
    Theta = np.asarray(Theta, dtype=float)
    _check_shapes(Theta, m, g)
    data = node_losses(Theta, m, cfg.alpha).sum() / g.n_nodes
    smooth = 0.0
    for u, v, w in g.edges:
        diff = Theta[u] - Theta[v]
        smooth += w * diff @ diff
    ridge = cfg.gamma * np.sum(Theta * Theta)
    return float(data + cfg.lam / 2 * (smooth + ridge))


def assemble_system(m: Moments, g: Graph, cfg: SolverConfig) -> tuple[np.ndarray, np.ndarray]:
    """Dense ``A`` and ``b`` with ``Phi(Theta) = Theta'A Theta/2 - Theta'b``.

    Theta is flattened node-major, i.e. ``Theta.reshape(-1)``.
    """
    N, L = m.n_nodes, m.size
    if N * L > DENSE_SIZE_LIMIT:
        raise ValueError(f"dense system of size {N * L} exceeds limit {DENSE_SIZE_LIMIT}")
    G = _curvature(m, cfg.alpha) / N
    A = cfg.lam * np.kron(laplacian(g) + cfg.gamma * np.eye(N), np.eye(L))
    for v in range(N):
        A[v * L:(v + 1) * L, v * L:(v + 1) * L] += G[v]
    b = (m.hp / N).reshape(-1)
    return A, b


def gradient(Theta, m: Moments, g: Graph, cfg: SolverConfig) -> np.ndarray:
    """Full gradient of Phi, blockwise, shape (N, L)."""
    Theta = np.asarray(Theta, dtype=float)
    N = g.n_nodes
    data = np.einsum("vlm,vm->vl", _curvature(m, cfg.alpha), Theta) / N - m.hp / N
    graph_term = g.degrees[:, None] * Theta - g.adjacency @ Theta
    return data + cfg.lam * (graph_term + cfg.gamma * Theta)


# -- step sizes ----------------------------------------------------------------

def learning_rates(m: Moments, g: Graph, cfg: SolverConfig, rtol: float = 1e-8,
                   max_iter: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """Block Lipschitz constants ``lambda_max(((1-a)H_v + aH'_v)/N + lam d_v I)``.

    Power iteration from the all-ones vector, run for all nodes at once.
    Nodes that fail to converge fall back to the trace (an upper bound on the
    largest eigenvalue of a PSD matrix); the second return value flags them.
    """
    N, L = m.n_nodes, m.size
    G = _curvature(m, cfg.alpha) / N
    shift = cfg.lam * g.degrees
    vec = np.ones((N, L)) / math.sqrt(L)
    est = np.zeros(N)
    done = np.zeros(N, dtype=bool)
    for _ in range(max_iter):
        w = np.einsum("vlm,vm->vl", G, vec)
        new = np.einsum("vl,vl->v", vec, w)
        norm = np.linalg.norm(w, axis=1)
        converged = np.abs(new - est) <= rtol * np.maximum(np.abs(new), 1e-300)
        est = new
        done |= converged
        if done.all():
            break
        ok = norm > 0
        vec[ok] = w[ok] / norm[ok, None]
    fallback = ~done
    if fallback.any():
        log.warning("power iteration did not converge on %d node(s); using trace bound",
                    int(fallback.sum()))
        est = np.where(fallback, np.trace(G, axis1=1, axis2=2), est)
    return np.maximum(est, 0.0) + shift, fallback


# -- cyclic block coordinate gradient descent ------------------------------------

@njit(cache=True, fastmath=True)
def _cycle(theta, G, c, rates, lam, lamgam, degrees, indptr, indices, weights):
    # In place: neighbours u < v already hold their cycle-i values.
    N, L = theta.shape
    delta2 = 0.0
    nb = np.empty(L)
    new = np.empty(L)
    for v in range(N):
        for k in range(L):
            nb[k] = 0.0
        for p in range(indptr[v], indptr[v + 1]):
            u = indices[p]
            w = weights[p]
            for k in range(L):
                nb[k] += w * theta[u, k]
        eta = rates[v]
        denom = eta + lamgam
        dv = degrees[v]
        for k in range(L):
            acc = 0.0
            for j in range(L):
                acc += G[v, k, j] * theta[v, j]
            grad = acc - c[v, k] + lam * (dv * theta[v, k] - nb[k])
            new[k] = (eta * theta[v, k] - grad) / denom
        for k in range(L):
            diff = new[k] - theta[v, k]
            delta2 += diff * diff
            theta[v, k] = new[k]
    return math.sqrt(delta2)


@njit(cache=True)
def _run_cycles(theta, G, c, rates, lam, lamgam, degrees, indptr, indices, weights, tol, max_cycles):
    for i in range(1, max_cycles + 1):
        if _cycle(theta, G, c, rates, lam, lamgam, degrees, indptr, indices, weights) <= tol:
            return i, True
    return max_cycles, False


def _prepare(m: Moments, g: Graph, cfg: SolverConfig):
    N = g.n_nodes
    G = np.ascontiguousarray(_curvature(m, cfg.alpha) / N)
    c = np.ascontiguousarray(m.hp / N)
    return G, c


def cbcgd_cycle(Theta, m: Moments, g: Graph, cfg: SolverConfig, rates: np.ndarray) -> np.ndarray:
    """One sweep of block updates over nodes 0..N-1; returns a new array."""
    Theta = np.array(Theta, dtype=float, copy=True, order="C")
    _check_shapes(Theta, m, g)
    G, c = _prepare(m, g, cfg)
    _cycle(Theta, G, c, np.asarray(rates, float), cfg.lam, cfg.lam * cfg.gamma,
           np.asarray(g.degrees), g.indptr, g.indices, g.weights)
    return Theta


@dataclass
class SolveResult:
    theta: np.ndarray
    cycles: int
    converged: bool
    trace: list[tuple[int, float, float]] = field(default_factory=list)


def cbcgd_solve(Theta0, m: Moments, g: Graph, cfg: SolverConfig, rates: np.ndarray | None = None,
                record_trace: bool = False, objective_target: float | None = None) -> SolveResult:
    """Iterate block cycles from ``Theta0``.

    Stops when the Frobenius norm of the change over a cycle drops to the
    tolerance. If ``objective_target`` is given the stopping rule becomes
    ``Phi(Theta_i) <= objective_target`` instead.
    """
    Theta = np.array(Theta0, dtype=float, copy=True, order="C")
    _check_shapes(Theta, m, g)
    if rates is None:
        rates, _ = learning_rates(m, g, cfg)
    G, c = _prepare(m, g, cfg)
    tol = cfg.tolerance(g.n_nodes, m.size)
    lamgam = cfg.lam * cfg.gamma
    degrees = np.asarray(g.degrees)
    rates = np.asarray(rates, dtype=float)
    trace = []
    if objective_target is not None and objective(Theta, m, g, cfg) <= objective_target:
        return SolveResult(Theta, 0, True, trace)
    if not (record_trace or objective_target is not None):
        cycles, ok = _run_cycles(Theta, G, c, rates, cfg.lam, lamgam, degrees, g.indptr,
                                 g.indices, g.weights, tol, cfg.max_cycles)
        if not ok:
            log.debug("cbcgd_solve hit max_cycles=%d", cfg.max_cycles)
        return SolveResult(Theta, int(cycles), bool(ok), trace)
    for i in range(1, cfg.max_cycles + 1):
        delta = _cycle(Theta, G, c, rates, cfg.lam, lamgam, degrees, g.indptr, g.indices, g.weights)
        phi = objective(Theta, m, g, cfg)
        if record_trace:
            trace.append((i, phi, delta))
        if objective_target is not None:
            if phi <= objective_target:
                return SolveResult(Theta, i, True, trace)
        elif delta <= tol:
            return SolveResult(Theta, i, True, trace)
    log.debug("cbcgd_solve hit max_cycles=%d", cfg.max_cycles)
    return SolveResult(Theta, cfg.max_cycles, False, trace)


def direct_solve(m: Moments, g: Graph, cfg: SolverConfig) -> np.ndarray:
    """Closed-form minimiser via Cholesky; returns Theta of shape (N, L)."""
    A, b = assemble_system(m, g, cfg)
    try:
        factor = cho_factor(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("system matrix is not positive definite; "
                                    "moments are probably corrupted") from exc
    return cho_solve(factor, b).reshape(m.n_nodes, m.size)


# -- iteration complexity ------------------------------------------------------

@dataclass
class IterationBound:
    M: float
    M_min: float
    i_max: int


def lipschitz_constants(m: Moments, g: Graph, cfg: SolverConfig) -> tuple[float, float]:
    """``M`` (global, smooth part incl. the Laplacian) and ``M_min`` (smallest block constant)."""
    A, _ = assemble_system(m, g, cfg)
    N, L = m.n_nodes, m.size
    smooth = A - cfg.lam * cfg.gamma * np.eye(N * L)
    M = float(np.linalg.eigvalsh(smooth)[-1])
    G = _curvature(m, cfg.alpha) / N
    blocks = np.linalg.eigvalsh(G)[:, -1] + cfg.lam * g.degrees
    return M, float(blocks.min())


def iteration_bound(M: float, M_min: float, lam: float, gamma: float, n_nodes: int, size: int,
                    phi_gap: float, epsilon: float) -> int:
    """Worst-case number of cycles to bring the objective gap below ``epsilon``."""
    if epsilon <= 0 or phi_gap < 0 or lam <= 0 or gamma <= 0:
        raise ValueError("invalid arguments to iteration_bound")
    if size < 2 or n_nodes < 1 or M < 0 or M_min < 0:
        raise ValueError("iteration_bound needs L >= 2, N >= 1 and non-negative constants")
    if phi_gap <= epsilon:
        return 0
    mu = lam * gamma
    base = mu * (M_min + mu)
    ratio = (base + 16.0 * M * M * math.log(3 * n_nodes * size) ** 2) / base
    return int(math.ceil(ratio * math.log(phi_gap / epsilon)))


def bound_for(m: Moments, g: Graph, cfg: SolverConfig, Theta0, epsilon: float) -> IterationBound:
    M, M_min = lipschitz_constants(m, g, cfg)
    phi_star = objective(direct_solve(m, g, cfg), m, g, cfg)
    gap = max(objective(Theta0, m, g, cfg) - phi_star, 0.0)
    return IterationBound(M, M_min, iteration_bound(M, M_min, cfg.lam, cfg.gamma, g.n_nodes,
                                                    m.size, gap, epsilon))
