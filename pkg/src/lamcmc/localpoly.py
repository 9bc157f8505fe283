"""Weighted local polynomial regression and ball-geometry diagnostics.

Fits live in local coordinates z = (x - center) / radius with hat-kernel
weights (every selected neighbor weighs 1), solved by column-pivoted QR of
the Vandermonde matrix.  Lagrange polynomials of the neighbor set give the
poisedness constant: the maximum of ||lambda(x')||_2 over the ball, found by
a low-discrepancy candidate sweep plus coordinate-wise golden-section polish.
The extremizer doubles as the refinement site.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import comb
from scipy.stats import norm, qmc

from . import _backend
from .basis import LocalFrame, eval_basis, eval_basis_many
from .errors import InsufficientPointsError

__all__ = [
    "LocalFit",
    "PoisednessReport",
    "fit",
    "evaluate",
    "lagrange",
    "poisedness",
    "refinement_site",
    "error_indicator",
]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class LocalFit:
    """Coefficients of one local regression plus its ball geometry."""

    frame: LocalFrame
    basis: object
    coefficients: np.ndarray
    radius: float
    neighbor_indices: np.ndarray
    condition_estimate: float


@dataclass(frozen=True)
class PoisednessReport:
    """Lower bound on the poisedness constant and the point achieving it."""

    lambda2: float
    site: np.ndarray
    evaluations: int


def _ball_radius_of(x, pts):
    diff = pts - x[None, :]
    return float(np.sqrt(np.einsum("ij,ij->i", diff, diff).max()))


def _frame_for(x, pts):
    radius = _ball_radius_of(x, pts)
    scale = radius if radius > 0.0 else 1.0
    return LocalFrame(center=x, scale=scale), radius


def fit(x, pts, values, mset, weights=None, neighbor_indices=None):
    """Weighted least-squares polynomial fit of (pts, values) centered at x.

    ``pts`` is (k, d) with k >= q; hat-kernel weights (all ones) by default.
    Raises DegenerateGeometryError when the neighbor geometry does not span
    the polynomial space.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    values = np.asarray(values, dtype=float).reshape(-1)
    k = pts.shape[0]
    if k != values.shape[0]:
        raise ValueError(f"{k} points but {values.shape[0]} values")
    if k < mset.q:
        raise InsufficientPointsError(
            f"fit needs at least q={mset.q} neighbors, got k={k}"
        )
    frame, radius = _frame_for(x, pts)
    vand = eval_basis_many(mset, frame, pts)
    coef, cond = _backend.solve_weighted_lsq(vand, values, weights)
    if neighbor_indices is None:
        neighbor_indices = np.arange(k, dtype=np.int64)
    return LocalFit(
        frame=frame,
        basis=mset,
        coefficients=coef,
        radius=radius,
        neighbor_indices=np.asarray(neighbor_indices, dtype=np.int64),
        condition_estimate=cond,
    )


def evaluate(local_fit, x):
    """Evaluate the fitted polynomial at x."""
    phi = eval_basis(local_fit.basis, local_fit.frame, np.asarray(x, dtype=float))
    return float(phi @ local_fit.coefficients)


def lagrange(pts, mset, frame=None, weights=None):
    """Least-squares Lagrange polynomials of the point set.

    Returns (coeffs, condition) where ``coeffs[j]`` holds the basis
    coefficients of lambda_j, the polynomial fitting the j-th indicator data.
    When k equals q and the system is nonsingular, lambda_j(x_i) = delta_ij.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    k = pts.shape[0]
    if k < mset.q:
        raise InsufficientPointsError(
            f"lagrange needs at least q={mset.q} points, got k={k}"
        )
    if frame is None:
        center = pts.mean(axis=0)
        frame, _ = _frame_for(center, pts)
    vand = eval_basis_many(mset, frame, pts)
    coef, cond = _backend.solve_weighted_lsq(vand, np.eye(k), weights)
    return coef.T, float(cond)


def _lambda_norms(lag_coef, mset, frame, pts):
    phi = eval_basis_many(mset, frame, pts)
    vals = phi @ lag_coef.T
    return np.sqrt(np.einsum("ij,ij->i", vals, vals))


@lru_cache(maxsize=32)
def _unit_ball_template(dim, count):
    """Deterministic low-discrepancy points in the unit ball (cached)."""
    # Halton in dim+1 unit cube -> Gaussian direction + radial stretch.
    u = qmc.Halton(d=dim + 1, scramble=False).random(count + 1)[1:]
    direction = norm.ppf(np.clip(u[:, :dim], 1e-12, 1.0 - 1e-12))
    norms = np.linalg.norm(direction, axis=1)
    norms[norms == 0.0] = 1.0
    r = u[:, dim] ** (1.0 / dim)
    pts = (r / norms)[:, None] * direction
    pts.setflags(write=False)
    return pts


def ball_candidates(center, radius, dim, count):
    """Deterministic low-discrepancy points filling the closed ball."""
    if radius <= 0.0 or count <= 0:
        return np.empty((0, dim))
    return center[None, :] + radius * _unit_ball_template(dim, count)


def _golden_line_max(f, lo, hi, iters=24):
    """Golden-section maximization of f on [lo, hi]; returns (t, f(t))."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    if fc >= fd:
        return c, fc
    return d, fd


@lru_cache(maxsize=8)
def _binom_table(pmax):
    tab = np.zeros((pmax + 1, pmax + 1))
    for n in range(pmax + 1):
        tab[n, : n + 1] = [comb(n, r, exact=True) for r in range(n + 1)]
    tab.setflags(write=False)
    return tab


def _line_norm2_poly(lag_coef, expon, z0, axis, pmax):
    """Coefficients of ||lambda(z0 + u e_axis)||_2^2 as a polynomial in u.

    Exact because each Lagrange polynomial restricted to an axis line is a
    degree <= p polynomial; the squared norm has degree <= 2p.
    """
    q = expon.shape[0]
    # monomial factors orthogonal to the line: prod_{i != axis} z0_i^alpha_i
    mono = z0[None, :] ** expon
    mono[:, axis] = 1.0
    z_perp = mono.prod(axis=1)
    # binomial expansion of (z0_axis + u)^alpha_axis
    a = expon[:, axis].astype(np.int64)
    r = np.arange(pmax + 1)
    diff = a[:, None] - r[None, :]
    za = z0[axis]
    powers = np.where(diff >= 0, za ** np.maximum(diff, 0), 0.0)
    cmat = z_perp[:, None] * _binom_table(pmax)[a] * powers  # (q, pmax+1)
    b = lag_coef @ cmat  # (k, pmax+1): lambda_j line-polynomial coefficients
    gram = b.T @ b
    deg = 2 * pmax
    coeffs = np.zeros(deg + 1)
    for r1 in range(pmax + 1):
        for r2 in range(pmax + 1):
            coeffs[r1 + r2] += gram[r1, r2]
    return coeffs


def _horner(coeffs, u):
    # coeffs: plain list, ascending powers
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * u + c
    return acc


def poisedness(x, pts, mset, budget=1024):
    """Estimate the poisedness constant of ``pts`` in the ball around x.

    The reported value is a lower bound on max ||lambda(x')||_2 over the
    closed ball (it is a maximum over evaluated candidates), converging as
    the budget grows.  The extremizer is the refinement site: in a poorly
    poised set it lands far from clusters and repairs the geometry.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    dim = x.shape[0]
    frame, radius = _frame_for(x, pts)
    lag_coef, _ = lagrange(pts, mset, frame=frame)

    if radius == 0.0:
        lam = _lambda_norms(lag_coef, mset, frame, x[None, :])
        return PoisednessReport(lambda2=float(lam[0]), site=x.copy(), evaluations=1)

    n_cand = min(int(budget), 64 * dim + 256)
    cand = np.vstack([pts, ball_candidates(x, radius, dim, n_cand)])
    lam = _lambda_norms(lag_coef, mset, frame, cand)
    evaluations = cand.shape[0]
    best = int(np.argmax(lam))
    site = cand[best].copy()
    best_val2 = float(lam[best]) ** 2

    # Coordinate-cycling golden-section polish on the squared norm, which
    # restricted to an axis line is an exact low-degree polynomial (same
    # maximizer as the norm itself).  Projected to the ball by construction.
    expon = mset.indices.astype(float)
    pmax = mset.max_degree
    r2 = radius * radius
    scale = frame.scale
    for sweep in range(20):
        axis = sweep % dim
        offset = site - x
        rest2 = float(offset @ offset) - offset[axis] ** 2
        span2 = r2 - rest2
        if span2 <= 0.0:
            continue
        half = math.sqrt(span2)
        lo, hi = -half - offset[axis], half - offset[axis]
        z0 = offset / scale
        coeffs = _line_norm2_poly(lag_coef, expon, z0, axis, pmax).tolist()
        u, val2 = _golden_line_max(
            lambda t: _horner(coeffs, t / scale), lo, hi
        )
        evaluations += 26
        if val2 > best_val2:
            best_val2 = val2
            site = site.copy()
            site[axis] += u

    # Guard against rounding pushing the polished site outside the ball.
    offset = site - x
    dist = float(np.linalg.norm(offset))
    if dist > radius:
        site = x + offset * (radius / dist)

    return PoisednessReport(
        lambda2=math.sqrt(max(best_val2, 0.0)), site=site, evaluations=evaluations
    )


def refinement_site(report):
    """The next point to evaluate: the poisedness extremizer."""
    return report.site


def error_indicator(radius, degree):
    """Local error indicator radius^(degree + 1)."""
    if radius < 0.0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    return float(radius) ** (int(degree) + 1)
