"""Gaussian kernel, dictionary feature maps and coherence-based online
dictionary maintenance."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist, pdist


def gaussian_kernel(x, y, sigma: float) -> float:
    """``exp(-||x - y||^2 / (2 sigma^2))``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    d2 = float(np.sum((x - y) ** 2))
    return float(np.exp(-d2 / (2.0 * sigma * sigma)))


def kernel_matrix(X, Y, sigma: float) -> np.ndarray:
    """Gram matrix between two point sets of shape (m, d) and (k, d)."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape[-1] != Y.shape[-1]:
        raise ValueError(f"dimension mismatch: {X.shape[-1]} vs {Y.shape[-1]}")
    return np.exp(-cdist(X, Y, "sqeuclidean") / (2.0 * sigma * sigma))


def feature_maps(points, centers, sigma: float) -> np.ndarray:
    """Kernel features of a batch of points against the dictionary centers.

    ``points`` may have any leading shape ``(..., d)``; the result has shape
    ``(..., L)``.
    """
    points = np.asarray(points, dtype=float)
    centers = np.asarray(centers, dtype=float)
    if points.shape[-1] != centers.shape[-1]:
        raise ValueError(f"dimension mismatch: points have d={points.shape[-1]}, "
                         f"centers have d={centers.shape[-1]}")
    lead = points.shape[:-1]
    flat = points.reshape(-1, points.shape[-1])
    return kernel_matrix(flat, centers, sigma).reshape(*lead, centers.shape[0])


def feature_map(x, D: "Dictionary") -> np.ndarray:
    """Length-L vector ``(K(x, x_1), ..., K(x, x_L))`` for a single point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return D.features(x.reshape(1, -1))[0]


def median_heuristic(points) -> float:
    """Median of all pairwise Euclidean distances."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[0] < 2:
        raise ValueError("median heuristic needs at least two points")
    med = float(np.median(pdist(points)))
    if med <= 0:
        raise ValueError("median pairwise distance is zero (degenerate sample)")
    return med


class Dictionary:
    """Ordered set of kernel centers with a coherence-gated insertion rule.

    A candidate ``x`` is admitted when ``max_l K(x, x_l) <= mu0``. Once the
    size exceeds ``capacity`` the center with the largest coherence (largest
    kernel value against any other current center) is evicted, the oldest
    one on ties.
    """

    def __init__(self, centers, sigma: float, mu0: float, capacity: int,
                 insertion_ids=None):
        if not sigma > 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        if not 0 < mu0 < 1:
            raise ValueError(f"mu0 must lie in (0, 1), got {mu0}")
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        centers = np.array(centers, dtype=float, ndmin=2)
        if centers.shape[0] < 1:
            raise ValueError("dictionary needs at least one center")
        if centers.shape[0] > capacity:
            raise ValueError("more centers than capacity")
        self.sigma = float(sigma)
        self.mu0 = float(mu0)
        self.capacity = int(capacity)
        self._centers = centers
        if insertion_ids is None:
            insertion_ids = np.arange(centers.shape[0])
        self._ids = np.asarray(insertion_ids, dtype=np.int64)
        self._counter = int(self._ids.max()) + 1
        self._gram = kernel_matrix(centers, centers, self.sigma)
        self.version = 0

    @property
    def centers(self) -> np.ndarray:
        view = self._centers.view()
        view.setflags(write=False)
        return view

    @property
    def insertion_ids(self) -> np.ndarray:
        return self._ids.copy()

    @property
    def dim(self) -> int:
        return self._centers.shape[1]

    def __len__(self) -> int:
        return self._centers.shape[0]

    def features(self, points) -> np.ndarray:
        return feature_maps(points, self._centers, self.sigma)

    def coherence(self, x) -> float:
        """Largest kernel value between ``x`` and the current centers."""
        x = np.asarray(x, dtype=float).reshape(1, -1)
        if x.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: {x.shape[1]} vs {self.dim}")
        return float(kernel_matrix(x, self._centers, self.sigma).max())

    def center_coherences(self) -> np.ndarray:
        """Per-center max kernel value against the other centers."""
        g = self._gram.copy()
        np.fill_diagonal(g, -np.inf)
        return g.max(axis=1) if len(self) > 1 else np.zeros(1)

    def update(self, x) -> tuple[bool, int | None]:
        """Offer ``x`` to the dictionary.

        Returns ``(inserted, evicted)`` where ``evicted`` is the index of the
        removed center in the post-insertion ordering (the new point sits at
        the end), or ``None``.
        """
        x = np.asarray(x, dtype=float).reshape(1, -1)
        if x.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: {x.shape[1]} vs {self.dim}")
        k = kernel_matrix(x, self._centers, self.sigma)[0]
        if k.max() > self.mu0:
            return False, None
        self._append(x[0], k)
        evicted = None
        if len(self) > self.capacity:
            evicted = self._evict()
        self.version += 1
        return True, evicted

    def _append(self, x: np.ndarray, k: np.ndarray) -> None:
        L = len(self)
        gram = np.empty((L + 1, L + 1))
        gram[:L, :L] = self._gram
        gram[L, :L] = gram[:L, L] = k
        gram[L, L] = 1.0
        self._gram = gram
        self._centers = np.vstack([self._centers, x])
        self._ids = np.append(self._ids, self._counter)
        self._counter += 1

    def _evict(self) -> int:
        coh = self.center_coherences()
        top = np.flatnonzero(coh == coh.max())
        idx = int(top[np.argmin(self._ids[top])])
        keep = np.arange(len(self)) != idx
        self._centers = self._centers[keep]
        self._ids = self._ids[keep]
        self._gram = self._gram[np.ix_(keep, keep)]
        return idx

    def copy(self) -> "Dictionary":
        d = Dictionary(self._centers.copy(), self.sigma, self.mu0, self.capacity, self._ids.copy())
        d._counter = self._counter
        d.version = self.version
        return d

    def to_json(self) -> dict:
        return {
            "schema": 1,
            "sigma": self.sigma,
            "mu0": self.mu0,
            "capacity": self.capacity,
            "centers": self._centers.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Dictionary":
        return cls(obj["centers"], obj["sigma"], obj["mu0"], obj["capacity"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "Dictionary":
        return cls.from_json(json.loads(Path(path).read_text()))

    def __repr__(self) -> str:
        return (f"Dictionary(size={len(self)}, d={self.dim}, sigma={self.sigma:.4g}, "
                f"mu0={self.mu0}, capacity={self.capacity})")


def init_dictionary(points, sigma: float, mu0: float, capacity: int) -> Dictionary:
    """Greedy scan: keep a point iff its coherence with the kept ones is
    at most ``mu0``; stop adding once ``capacity`` is reached."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[0] == 0:
        raise ValueError("cannot build a dictionary from an empty stream")
    D = Dictionary(points[:1], sigma, mu0, capacity)
    for x in points[1:]:
        if len(D) >= capacity:
            break
        D.update(x)
    return D
