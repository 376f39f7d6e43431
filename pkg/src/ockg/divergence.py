"""Pearson-divergence estimates from fitted coefficients, and node/global scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .solver import Moments, node_losses


def pe_divergence(Theta: np.ndarray, m: Moments, alpha: float) -> np.ndarray:
    """Per-node ``-l_v(theta_v) - 1/2``.

    The per-node loss here carries no ``1/N`` factor, so the estimate does
    not shrink with the size of the graph.
    """
    Theta = np.asarray(Theta, dtype=float)
    if Theta.ndim == 1:
        Theta = Theta[None]
    if Theta.shape != m.hp.shape:
        raise ValueError(f"shape mismatch: Theta {Theta.shape}, moments {m.hp.shape}")
    return -node_losses(Theta, m, alpha) - 0.5


def pe_divergence_from_samples(Theta: np.ndarray, phi_ref: np.ndarray, phi_test: np.ndarray,
                               alpha: float) -> np.ndarray:
    """Same estimate written as window averages of the fitted ratio ``f_v``.

    ``phi_ref`` and ``phi_test`` hold features of shape (N, n, L).
    """
    f_ref = np.einsum("vil,vl->vi", phi_ref, Theta)
    f_test = np.einsum("vil,vl->vi", phi_test, Theta)
    return (f_test.mean(axis=1)
            - (1.0 - alpha) / 2 * (f_ref ** 2).mean(axis=1)
            - alpha / 2 * (f_test ** 2).mean(axis=1)
            - 0.5)


def node_score(pe_forward, pe_backward):
    """``max(PE_forward + PE_backward, 0)``; works elementwise on arrays."""
    return np.maximum(np.asarray(pe_forward) + np.asarray(pe_backward), 0.0)


def global_score(node_scores) -> float:
    return float(np.sum(node_scores))


@dataclass
class ScorePoint:
    time: int
    node_scores: np.ndarray
    pe_forward: np.ndarray
    pe_backward: np.ndarray
    converged: bool = True

    @property
    def global_score(self) -> float:
        return global_score(self.node_scores)

    @classmethod
    def from_estimates(cls, time: int, pe_forward, pe_backward, converged: bool = True) -> "ScorePoint":
        pe_forward = np.asarray(pe_forward, dtype=float)
        pe_backward = np.asarray(pe_backward, dtype=float)
        return cls(time, node_score(pe_forward, pe_backward), pe_forward, pe_backward, converged)


class ScoreSeries:
    """Time-indexed score points, stored column-wise."""

    def __init__(self, times, node_scores, pe_forward, pe_backward, converged=None):
        self.times = np.asarray(times, dtype=np.int64)
        node_scores = np.asarray(node_scores, dtype=float)
        if node_scores.ndim != 2:
            node_scores = node_scores.reshape(len(self.times), -1)
        if node_scores.shape[0] != len(self.times):
            raise ValueError("one row of node scores per time stamp expected")
        self.node_scores = node_scores
        self.pe_forward = np.asarray(pe_forward, dtype=float).reshape(self.node_scores.shape)
        self.pe_backward = np.asarray(pe_backward, dtype=float).reshape(self.node_scores.shape)
        if converged is None:
            converged = np.ones(len(self.times), dtype=bool)
        self.converged = np.asarray(converged, dtype=bool)

    @classmethod
    def from_points(cls, points: list[ScorePoint], n_nodes: int) -> "ScoreSeries":
        if not points:
            empty = np.zeros((0, n_nodes))
            return cls([], empty, empty, empty)
        return cls([p.time for p in points],
                   np.stack([p.node_scores for p in points]),
                   np.stack([p.pe_forward for p in points]),
                   np.stack([p.pe_backward for p in points]),
                   [p.converged for p in points])

    @property
    def global_scores(self) -> np.ndarray:
        return self.node_scores.sum(axis=1)

    @property
    def n_nodes(self) -> int:
        return self.node_scores.shape[1]

    def __len__(self) -> int:
        return len(self.times)

    def at(self, t: int) -> int:
        """Row index of the score point closest in time to ``t`` (earliest on ties)."""
        if len(self) == 0:
            raise ValueError("empty score series")
        return int(np.argmin(np.abs(self.times - t)))

    def header(self) -> list[str]:
        N = self.n_nodes
        return (["t", "S_t"] + [f"S_{v}" for v in range(N)]
                + [f"PEf_{v}" for v in range(N)] + [f"PEb_{v}" for v in range(N)])

    def to_csv(self, path) -> None:
        table = np.column_stack([self.times, self.global_scores, self.node_scores,
                                 self.pe_forward, self.pe_backward])
        fmt = ["%d"] + ["%.17g"] * (table.shape[1] - 1)
        np.savetxt(path, table, delimiter=",", header=",".join(self.header()),
                   comments="", fmt=fmt)

    @classmethod
    def from_csv(cls, path) -> "ScoreSeries":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        if header[:2] != ["t", "S_t"] or (len(header) - 2) % 3:
            raise ValueError(f"{path}: not a score CSV")
        N = (len(header) - 2) // 3
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if table.size == 0:
            table = np.zeros((0, len(header)))
        return cls(table[:, 0].astype(np.int64), table[:, 2:2 + N],
                   table[:, 2 + N:2 + 2 * N], table[:, 2 + 2 * N:])
