"""Pure NumPy fallback kernels.

Mirrors the semantics of the compiled ``_core`` module: exact k-nearest
neighbors with (distance, insertion index) lexicographic ordering, and the
pivoted-QR weighted least-squares solve.  Selected by ``_backend`` when the
compiled extension is unavailable or explicitly disabled.
"""

import numpy as np
import scipy.linalg

from .errors import DegenerateGeometryError, InsufficientPointsError

_EPS = np.finfo(float).eps

# Condition-estimate ceiling beyond which a local system is treated as rank
# deficient: coefficients from such fits are noise amplified past any useful
# precision, and callers must repair the geometry instead.
COND_MAX = 1e12


class PointIndex:
    """Growable point store answering exact kNN queries by exhaustive scan."""

    def __init__(self, dim):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = int(dim)
        self._pts = np.empty((64, self.dim))
        self.n = 0

    def append(self, x):
        if self.n == self._pts.shape[0]:
            grown = np.empty((2 * self.n, self.dim))
            grown[: self.n] = self._pts
            self._pts = grown
        self._pts[self.n] = x
        self.n += 1
        return self.n - 1

    def points_view(self):
        return self._pts[: self.n]

    def query(self, x, k):
        """k nearest stored points; ties broken toward lower insertion index."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if k > self.n:
            raise InsufficientPointsError(
                f"query asked for k={k} neighbors but only {self.n} points are stored"
            )
        x = np.asarray(x, dtype=float)
        diff = self._pts[: self.n] - x[None, :]
        d2 = np.einsum("ij,ij->i", diff, diff)
        if k == self.n:
            cand = np.arange(self.n)
        else:
            kth = np.partition(d2, k - 1)[k - 1]
            cand = np.flatnonzero(d2 <= kth)
        order = np.lexsort((cand, d2[cand]))
        sel = cand[order][:k]
        return sel.astype(np.int64), np.sqrt(d2[sel])


def solve_weighted_lsq(vand, rhs, weights=None):
    """Least squares via column-pivoted QR of the weighted Vandermonde.

    Returns (coefficients, condition_estimate).  ``rhs`` may be a vector or a
    (k, m) matrix.  Raises DegenerateGeometryError on rank deficiency.
    """
    vand = np.asarray(vand, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    k, q = vand.shape
    if k < q:
        raise InsufficientPointsError(f"need at least q={q} rows, got k={k}")
    if weights is not None:
        w = np.sqrt(np.asarray(weights, dtype=float))
        vand = vand * w[:, None]
        rhs = rhs * (w if rhs.ndim == 1 else w[:, None])

    qmat, rmat, piv = scipy.linalg.qr(
        vand, mode="economic", pivoting=True, check_finite=False
    )
    rdiag = np.abs(np.diag(rmat))
    rmax = rdiag.max() if rdiag.size else 0.0
    rmin = rdiag.min() if rdiag.size else 0.0
    if rmax == 0.0 or rmin <= rmax / COND_MAX:
        cond = float("inf") if rmin == 0.0 else rmax / rmin
        raise DegenerateGeometryError(
            f"rank-deficient local system (k={k}, q={q})", condition_estimate=cond
        )
    cond = rmax / rmin
    z = scipy.linalg.solve_triangular(rmat, qmat.T @ rhs, check_finite=False)
    coef = np.empty_like(z)
    coef[piv] = z
    return coef, float(cond)
