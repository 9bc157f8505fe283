"""The evaluated set: points with exact log-density values and kNN queries.

Each sampling chain owns one EvaluatedSet exclusively (single writer); the
set is never shared mutably across threads.
"""

from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import InsufficientPointsError

__all__ = ["EvaluatedSet", "NeighborQueryResult", "DUPLICATE_TOL"]

# Two points are duplicates when closer than this relative tolerance; keeps
# repeated refinement at one site from producing singular local systems.
DUPLICATE_TOL = 1e-12


@dataclass(frozen=True)
class NeighborQueryResult:
    """k nearest neighbors of a query point, nearest first."""

    indices: np.ndarray
    distances: np.ndarray
    radius: float


class EvaluatedSet:
    """Archive of points where the true log-density has been evaluated.

    Supports insertion with duplicate suppression and exact k-nearest-neighbor
    queries with deterministic (distance, insertion index) tie-breaking.
    """

    def __init__(self, dim, backend=None):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = int(dim)
        self._index = _backend.make_point_index(self.dim, backend)
        self._values = np.empty(64)
        self._n = 0
        # Bumped on every insertion; lets callers invalidate cached fits.
        self.version = 0

    def __len__(self):
        return self._n

    @property
    def points(self):
        """(n, dim) read view of stored coordinates, in insertion order."""
        return self._index.points_view()

    @property
    def values(self):
        """(n,) read view of stored function values."""
        return self._values[: self._n]

    def insert(self, x, g):
        """Insert (x, g); returns the index of x (existing index on duplicate)."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.dim:
            raise ValueError(f"point has {x.shape[0]} coordinates, expected {self.dim}")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"non-finite point rejected: {x}")
        g = float(g)
        if not np.isfinite(g):
            raise ValueError(f"non-finite value rejected: {g}")
        dup = self.find_duplicate(x)
        if dup >= 0:
            return dup
        if self._n == self._values.shape[0]:
            grown = np.empty(2 * self._n)
            grown[: self._n] = self._values
            self._values = grown
        idx = self._index.append(x)
        self._values[idx] = g
        self._n += 1
        self.version += 1
        return idx

    def find_duplicate(self, x):
        """Index of a stored point within duplicate tolerance of x, or -1."""
        if self._n == 0:
            return -1
        x = np.asarray(x, dtype=float).reshape(-1)
        idx, dist = self._index.query(x, 1)
        tol = DUPLICATE_TOL * (1.0 + float(np.linalg.norm(x)))
        return int(idx[0]) if dist[0] < tol else -1

    def nearest_distance(self, x):
        """Distance from x to the closest stored point (inf when empty)."""
        if self._n == 0:
            return float("inf")
        x = np.asarray(x, dtype=float).reshape(-1)
        _, dist = self._index.query(x, 1)
        return float(dist[0])

    def knn(self, x, k):
        """The k stored points nearest to x (Euclidean), nearest first."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if k > self._n:
            raise InsufficientPointsError(
                f"knn asked for k={k} but the set holds {self._n} points"
            )
        x = np.asarray(x, dtype=float).reshape(-1)
        idx, dist = self._index.query(x, k)
        return NeighborQueryResult(indices=idx, distances=dist, radius=float(dist[-1]))

    def ball_radius(self, x, k):
        """Distance from x to its k-th nearest stored point."""
        return self.knn(x, k).radius
