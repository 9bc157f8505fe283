"""Polynomial space descriptions and monomial basis evaluation.

A polynomial space is described by a set of multi-indices, either total-degree
or an l^nu truncation of it.  Basis functions are plain monomials evaluated in
local coordinates z = (x - center) / scale; the shift/scale keeps Vandermonde
matrices well conditioned when fits live on small balls far from the origin.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LocalFrame",
    "MultiIndexSet",
    "total_degree_set",
    "sparse_set",
    "eval_basis",
    "eval_basis_many",
]


@dataclass(frozen=True)
class LocalFrame:
    """Affine frame for local coordinates: z = (x - center) / scale."""

    center: np.ndarray
    scale: float

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        object.__setattr__(self, "center", center)
        if not np.isfinite(self.scale) or self.scale <= 0.0:
            raise ValueError(f"frame scale must be positive, got {self.scale}")

    def local(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.scale


@dataclass(frozen=True)
class MultiIndexSet:
    """An ordered family of multi-indices defining a polynomial space.

    ``indices`` is a (q, dim) integer array in graded lexicographic order:
    ascending total degree, and within a degree the first coordinate varies
    slowest (so for dim=2, degree 2: (2,0), (1,1), (0,2)).  The zero index is
    always first.
    """

    dim: int
    max_degree: int
    nu: float
    indices: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.indices, dtype=np.int32))
        object.__setattr__(self, "indices", arr)
        arr.setflags(write=False)

    @property
    def q(self):
        """Dimension of the polynomial space."""
        return self.indices.shape[0]

    def __len__(self):
        return self.indices.shape[0]


def _graded_lex_key(alpha):
    return (sum(alpha), tuple(-a for a in alpha))


def _enumerate_total_degree(dim, degree):
    """All alpha in N_0^dim with sum(alpha) <= degree."""
    out = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            for last in range(remaining + 1):
                out.append(prefix + (last,))
            return
        for head in range(remaining + 1):
            rec(prefix + (head,), remaining - head, slots - 1)

    rec((), degree, dim)
    return out


def total_degree_set(dim, degree):
    """The total-degree space: all multi-indices with |alpha| <= degree."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    alphas = sorted(_enumerate_total_degree(dim, degree), key=_graded_lex_key)
    return MultiIndexSet(dim=dim, max_degree=degree, nu=1.0, indices=np.array(alphas))


def sparse_set(dim, degree, nu):
    """l^nu truncation: multi-indices with (sum_i alpha_i^nu)^(1/nu) <= degree.

    nu=1 reproduces the total-degree set.  nu=0 is the no-cross-terms space:
    at most one nonzero component, of size at most ``degree``.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    if not 0.0 <= nu <= 1.0:
        raise ValueError(f"nu must lie in [0, 1], got {nu}")

    if nu == 1.0:
        base = total_degree_set(dim, degree)
        return MultiIndexSet(dim=dim, max_degree=degree, nu=1.0, indices=base.indices)

    # For nu <= 1 the l^nu ball is contained in the total-degree simplex, so
    # enumerating the simplex and filtering is exact.
    candidates = _enumerate_total_degree(dim, degree)
    if nu == 0.0:
        kept = [a for a in candidates if sum(1 for v in a if v > 0) <= 1]
    else:
        # Compare sum(alpha_i^nu) <= degree^nu with a small relative slack so
        # boundary indices (e.g. alpha = (degree, 0, ...)) survive rounding.
        bound = float(degree) ** nu * (1.0 + 1e-12) if degree > 0 else 0.0
        kept = []
        for a in candidates:
            s = sum(float(v) ** nu for v in a if v > 0)
            if s <= bound:
                kept.append(a)
    kept.sort(key=_graded_lex_key)
    return MultiIndexSet(dim=dim, max_degree=degree, nu=nu, indices=np.array(kept))


def eval_basis(mset, frame, x):
    """Evaluate all q monomials at one point, ordered as ``mset.indices``."""
    z = frame.local(x)
    return _monomials(mset.indices, z[None, :])[0]


def eval_basis_many(mset, frame, pts):
    """Vandermonde block: row i holds the basis evaluated at ``pts[i]``."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    z = (pts - frame.center[None, :]) / frame.scale
    return _monomials(mset.indices, z)


def _monomials(indices, z):
    n = z.shape[0]
    q = indices.shape[0]
    out = np.ones((n, q))
    for j in range(q):
        alpha = indices[j]
        for i, a in enumerate(alpha):
            if a > 0:
                out[:, j] *= z[:, i] ** int(a)
    return out
