"""Hyperparameter grids and cross-validated selection of (sigma, lambda, gamma)."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .graph import Graph
from .kernels import feature_maps, median_heuristic
from .solver import SolverConfig, cbcgd_solve, moments_from_features, node_losses

GAMMAS = (1e-5, 1e-3, 0.1, 1.0)
LAMBDA_FACTORS = (1e-3, 1e-2, 0.1, 1.0, 10.0)
# With mu0 = 0.1 a width equal to the median distance leaves only a handful
# of centers (coherence <= 0.1 means >= 2.15 sigma apart); half of it keeps
# enough resolution to see changes in shape rather than location.
SIGMA_SCALE = 0.5


@dataclass
class GridSpec:
    sigmas: list[float]
    lambdas: list[float]
    gammas: list[float]
    node_sigmas: list[float] = field(default_factory=list)

    def __post_init__(self):
        for name in ("sigmas", "lambdas", "gammas"):
            vals = getattr(self, name)
            if not vals or any(not v > 0 for v in vals):
                raise ValueError(f"{name} must be a non-empty list of positive values")

    def combinations(self):
        return list(itertools.product(self.sigmas, self.lambdas, self.gammas))

    def __len__(self) -> int:
        return len(self.sigmas) * len(self.lambdas) * len(self.gammas)

    def to_json(self) -> dict:
        return {"sigmas": list(self.sigmas), "lambdas": list(self.lambdas),
                "gammas": list(self.gammas), "node_sigmas": list(self.node_sigmas)}


def sigma_grid(node_sigmas) -> list[float]:
    s = np.asarray(node_sigmas, dtype=float)
    lo, med, hi = float(s.min()), float(np.median(s)), float(s.max())
    return [lo, (lo + med) / 2, med, (med + hi) / 2, hi]


def build_grids(calibration, graph: Graph, lambda_scale: float | None = None,
                sigma_scale: float = SIGMA_SCALE) -> GridSpec:
    """Grids from a change-free calibration block of shape (N, m, d).

    The kernel-width grid spans the per-node median-heuristic widths times
    ``sigma_scale``; the lambda grid is scaled by ``1 / mean_degree`` unless
    ``lambda_scale`` is given (needed for an edgeless graph).
    """
    if not sigma_scale > 0:
        raise ValueError(f"sigma_scale must be positive, got {sigma_scale}")
    calibration = np.asarray(calibration, dtype=float)
    if calibration.ndim == 2:
        calibration = calibration[..., None]
    node_sigmas = [sigma_scale * median_heuristic(calibration[v]) for v in range(calibration.shape[0])]
    if lambda_scale is None:
        if graph.mean_degree <= 0:
            raise ValueError("graph has no edges; pass lambda_scale explicitly")
        lambda_scale = 1.0 / graph.mean_degree
    return GridSpec(sigma_grid(node_sigmas), [f * lambda_scale for f in LAMBDA_FACTORS],
                    list(GAMMAS), node_sigmas)


def split_indices(n: int, R: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Random partition of ``range(n)`` into ``R`` disjoint, near-equal folds."""
    if R < 2:
        raise ValueError("need at least two folds")
    if n < 2 * R:
        raise ValueError(f"n={n} too small for {R} folds (need n >= 2R)")
    return [np.sort(f) for f in np.array_split(rng.permutation(n), R)]


@dataclass
class TuneResult:
    sigma: float
    lam: float
    gamma: float
    table: list[dict]
    folds: list[list[int]]

    @property
    def selected(self) -> tuple[float, float, float]:
        return self.sigma, self.lam, self.gamma

    def to_json(self) -> dict:
        return {"sigma": self.sigma, "lambda": self.lam, "gamma": self.gamma,
                "table": self.table, "folds": self.folds}


def heldout_losses(X, Xp, graph: Graph, centers, sigma: float, folds, alpha: float,
                   pairs, tol: float | None = None, max_cycles: int = 10_000) -> dict:
    """Per-fold held-out losses for every ``(lambda, gamma)`` in ``pairs`` at one width."""
    n = X.shape[1]
    phi = feature_maps(X, centers, sigma)
    phip = feature_maps(Xp, centers, sigma)
    out = {pair: [] for pair in pairs}
    for test_idx in folds:
        train_idx = np.setdiff1d(np.arange(n), test_idx)
        train = moments_from_features(phi[:, train_idx], phip[:, train_idx])
        test = moments_from_features(phi[:, test_idx], phip[:, test_idx])
        zero = np.zeros((graph.n_nodes, centers.shape[0]))
        for lam, gamma in pairs:
            cfg = SolverConfig(alpha, lam, gamma, tol=tol, max_cycles=max_cycles)
            theta = cbcgd_solve(zero, train, graph, cfg).theta
            out[(lam, gamma)].append(float(node_losses(theta, test, alpha).mean()))
    return out


def tune(X, Xp, graph: Graph, centers, grids: GridSpec, R: int, alpha: float,
         rng: np.random.Generator, tol: float | None = None,
         max_cycles: int = 10_000) -> TuneResult:
    """Pick the grid point with the smallest mean held-out loss.

    ``X`` and ``Xp`` are (N, n, d) reference and test blocks; fold ``r`` uses
    the same time indices in both. Exact ties go to the smaller gamma, then
    smaller lambda, then smaller sigma.
    """
    X = np.asarray(X, dtype=float)
    Xp = np.asarray(Xp, dtype=float)
    if X.ndim == 2:
        X, Xp = X[..., None], Xp[..., None]
    if X.shape != Xp.shape:
        raise ValueError("reference and test blocks differ in shape")
    centers = np.asarray(centers, dtype=float)
    folds = split_indices(X.shape[1], R, rng)
    pairs = list(itertools.product(grids.lambdas, grids.gammas))
    table = []
    for sigma in grids.sigmas:
        losses = heldout_losses(X, Xp, graph, centers, sigma, folds, alpha, pairs, tol, max_cycles)
        for lam, gamma in pairs:
            fl = losses[(lam, gamma)]
            table.append({"sigma": sigma, "lambda": lam, "gamma": gamma,
                          "mean_loss": float(np.mean(fl)), "fold_losses": fl})
    best = min(table, key=lambda r: (r["mean_loss"], r["gamma"], r["lambda"], r["sigma"]))
    return TuneResult(best["sigma"], best["lambda"], best["gamma"], table,
                      [f.tolist() for f in folds])
