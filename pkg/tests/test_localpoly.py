import math

import numpy as np
import pytest

from lamcmc.basis import LocalFrame, eval_basis_many, total_degree_set
from lamcmc.errors import DegenerateGeometryError, InsufficientPointsError
from lamcmc.localpoly import (
    error_indicator,
    evaluate,
    fit,
    lagrange,
    poisedness,
    refinement_site,
)


def normal_equations_oracle(pts, vals, mset, center, weights=None):
    """Dense (V^T W V)^{-1} V^T W g solve, the matrix formula verbatim."""
    x = np.asarray(center, dtype=float)
    diff = pts - x[None, :]
    radius = float(np.sqrt((diff**2).sum(axis=1)).max())
    frame = LocalFrame(center=x, scale=radius if radius > 0 else 1.0)
    V = eval_basis_many(mset, frame, pts)
    W = np.diag(weights if weights is not None else np.ones(len(pts)))
    return np.linalg.solve(V.T @ W @ V, V.T @ W @ np.asarray(vals, dtype=float))


def grid_lambda_max(pts, mset, center, radius, n=10**4):
    """Dense-grid oracle for the poisedness constant (1D and 2D).

    The stored points themselves join the grid so maxima attained exactly at
    data sites are not missed by grid spacing.
    """
    x = np.asarray(center, dtype=float)
    frame = LocalFrame(center=x, scale=radius if radius > 0 else 1.0)
    coef, _ = lagrange(pts, mset, frame=frame)
    dim = x.shape[0]
    if dim == 1:
        grid = x[None, :] + np.linspace(-radius, radius, n)[:, None]
    else:
        side = int(math.sqrt(n))
        u = np.linspace(-radius, radius, side)
        gx, gy = np.meshgrid(u, u)
        grid = np.column_stack([gx.ravel(), gy.ravel()])
        grid = grid[(grid**2).sum(axis=1) <= radius**2] + x[None, :]
    grid = np.vstack([grid, np.atleast_2d(pts)])
    phi = eval_basis_many(mset, frame, grid)
    vals = np.sqrt(((phi @ coef.T) ** 2).sum(axis=1))
    i = int(np.argmax(vals))
    return float(vals[i]), grid[i]


class TestFit:
    def test_quadratic_reproduction(self):
        # quadratic data recovered exactly by a quadratic fit
        g = lambda x: 3.0 + 2.0 * x - x * x
        pts = np.array([[-1.0], [-0.5], [0.0], [0.5], [1.0], [1.5]])
        vals = g(pts[:, 0])
        mset = total_degree_set(1, 2)
        f = fit(np.array([0.2]), pts, vals, mset)
        assert evaluate(f, [0.2]) == pytest.approx(3.36, abs=1e-10)
        assert evaluate(f, [0.0]) == pytest.approx(3.0, abs=1e-10)

    def test_interpolation_when_k_equals_q(self):
        rng = np.random.default_rng(1)
        pts = np.array([[-1.0], [0.3], [1.0]])
        vals = rng.normal(size=3)
        mset = total_degree_set(1, 2)
        f = fit(np.array([0.0]), pts, vals, mset)
        for p, v in zip(pts, vals):
            assert evaluate(f, p) == pytest.approx(v, abs=1e-10)

    def test_matches_normal_equations_oracle(self):
        rng = np.random.default_rng(2)
        mset = total_degree_set(2, 2)
        for _ in range(20):
            pts = rng.normal(size=(12, 2))
            vals = rng.normal(size=12)
            x = rng.normal(size=2) * 0.3
            f = fit(x, pts, vals, mset)
            oracle = normal_equations_oracle(pts, vals, mset, x)
            np.testing.assert_allclose(f.coefficients, oracle, rtol=1e-8)

    def test_weighted_matches_oracle(self):
        rng = np.random.default_rng(3)
        mset = total_degree_set(1, 2)
        pts = rng.normal(size=(8, 1))
        vals = rng.normal(size=8)
        w = rng.uniform(0.5, 2.0, size=8)
        x = np.zeros(1)
        f = fit(x, pts, vals, mset, weights=w)
        oracle = normal_equations_oracle(pts, vals, mset, x, weights=w)
        np.testing.assert_allclose(f.coefficients, oracle, rtol=1e-8)

    def test_radius_equals_max_distance(self):
        rng = np.random.default_rng(4)
        pts = rng.normal(size=(9, 3))
        x = rng.normal(size=3)
        f = fit(x, pts, rng.normal(size=9), total_degree_set(3, 1))
        assert f.radius == pytest.approx(np.linalg.norm(pts - x, axis=1).max())

    def test_too_few_points(self):
        mset = total_degree_set(1, 2)
        with pytest.raises(InsufficientPointsError):
            fit(np.zeros(1), np.array([[0.0], [1.0]]), np.zeros(2), mset)

    def test_degenerate_geometry_raises(self):
        # five copies of two distinct sites cannot span quadratics
        pts = np.array([[0.0, 0.0]] * 3 + [[1.0, 0.0]] * 3)
        pts = pts + np.random.default_rng(5).normal(size=pts.shape) * 1e-14
        mset = total_degree_set(2, 2)
        with pytest.raises(DegenerateGeometryError) as err:
            fit(np.array([0.5, 0.0]), pts, np.zeros(6), mset)
        assert err.value.condition_estimate > 1e10


class TestEvaluate:
    def test_constant_fit(self):
        mset = total_degree_set(2, 1)
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        f = fit(np.zeros(2), pts, np.full(3, 4.25), mset)
        for x in ([0.3, 0.4], [10.0, -3.0]):
            assert evaluate(f, x) == pytest.approx(4.25, abs=1e-9)

    def test_matches_symbolic_expansion(self):
        rng = np.random.default_rng(6)
        mset = total_degree_set(2, 2)
        pts = rng.normal(size=(10, 2))
        vals = rng.normal(size=10)
        x0 = np.zeros(2)
        f = fit(x0, pts, vals, mset)

        def expand(y):
            z = (np.asarray(y) - f.frame.center) / f.frame.scale
            total = 0.0
            for coef, alpha in zip(f.coefficients, mset.indices):
                total += coef * np.prod(z ** alpha)
            return total

        for _ in range(20):
            y = rng.normal(size=2)
            assert evaluate(f, y) == pytest.approx(expand(y), rel=1e-10, abs=1e-12)


class TestLagrange:
    def test_interpolation_identity(self):
        pts = np.array([[-1.0], [0.0], [1.0]])
        mset = total_degree_set(1, 2)
        coef, cond = lagrange(pts, mset)
        assert cond < 1e8
        frame_pts = eval_basis_many(mset, LocalFrame(pts.mean(axis=0), 1.0), pts)
        vals = frame_pts @ coef.T
        np.testing.assert_allclose(vals, np.eye(3), atol=1e-10)

    def test_partition_of_unity(self):
        rng = np.random.default_rng(7)
        pts = np.array([[-1.0], [-0.2], [0.9]])
        mset = total_degree_set(1, 2)
        frame = LocalFrame(center=np.zeros(1), scale=1.0)
        coef, _ = lagrange(pts, mset, frame=frame)
        for _ in range(10):
            y = rng.uniform(-1, 1, size=(1, 1))
            phi = eval_basis_many(mset, frame, y)
            assert float((phi @ coef.T).sum()) == pytest.approx(1.0, abs=1e-9)

    def test_overdetermined_matches_oracle(self):
        rng = np.random.default_rng(8)
        mset = total_degree_set(2, 2)
        pts = rng.normal(size=(8, 2))
        center = pts.mean(axis=0)
        frame_radius = np.linalg.norm(pts - center, axis=1).max()
        frame = LocalFrame(center=center, scale=frame_radius)
        coef, _ = lagrange(pts, mset, frame=frame)
        V = eval_basis_many(mset, frame, pts)
        oracle = np.linalg.solve(V.T @ V, V.T @ np.eye(8)).T
        np.testing.assert_allclose(coef, oracle, rtol=1e-8, atol=1e-10)


class TestPoisedness:
    def test_symmetric_pair_linear(self):
        delta = 0.8
        pts = np.array([[-delta], [delta]])
        mset = total_degree_set(1, 1)
        rep = poisedness(np.zeros(1), pts, mset)
        assert 0.99 <= rep.lambda2 <= 1.01
        oracle, _ = grid_lambda_max(pts, mset, np.zeros(1), delta)
        assert rep.lambda2 <= oracle + 1e-6
        assert abs(rep.lambda2 - oracle) / oracle < 0.02

    def test_1d_interpolation_grid_oracle(self):
        delta = 1.0
        pts = np.array([[-1.0], [1.0]])
        mset = total_degree_set(1, 1)
        rep = poisedness(np.zeros(1), pts, mset)
        oracle, _ = grid_lambda_max(pts, mset, np.zeros(1), delta)
        assert abs(rep.lambda2 - oracle) / oracle < 0.02

    def test_clustered_points_poorly_poised(self):
        rng = np.random.default_rng(9)
        delta = 1.0
        cluster = rng.normal(size=(6, 2)) * (delta / 100)
        far = np.array([[delta, 0.0]])
        pts = np.vstack([cluster, far])
        mset = total_degree_set(2, 2)
        rep = poisedness(np.zeros(2), pts, mset)
        assert rep.lambda2 >= 10.0
        oracle, _ = grid_lambda_max(pts, mset, np.zeros(2), delta, n=40000)
        assert rep.lambda2 <= oracle * (1 + 1e-6)

    def test_2d_well_poised_grid_oracle(self):
        # symmetric hexagon + center: nicely poised for quadratics
        ang = np.linspace(0, 2 * math.pi, 7)[:-1]
        pts = np.vstack([np.zeros(2), np.column_stack([np.cos(ang), np.sin(ang)])])
        mset = total_degree_set(2, 2)
        rep = poisedness(np.zeros(2), pts, mset)
        oracle, _ = grid_lambda_max(pts, mset, np.zeros(2), 1.0, n=160000)
        assert rep.lambda2 <= oracle * (1 + 1e-6)
        assert abs(rep.lambda2 - oracle) / oracle < 0.02

    def test_site_inside_ball(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            pts = rng.normal(size=(7, 2))
            x = rng.normal(size=2) * 0.2
            radius = np.linalg.norm(pts - x, axis=1).max()
            rep = poisedness(x, pts, total_degree_set(2, 2))
            assert np.linalg.norm(rep.site - x) <= radius * (1 + 1e-9)

    def test_refinement_site_far_from_cluster(self):
        rng = np.random.default_rng(11)
        delta = 1.0
        cluster = rng.normal(size=(6, 2)) * (delta / 100)
        far = np.array([[delta, 0.0]])
        pts = np.vstack([cluster, far])
        rep = poisedness(np.zeros(2), pts, total_degree_set(2, 2))
        site = refinement_site(rep)
        assert np.linalg.norm(site - cluster.mean(axis=0)) >= 0.5 * delta

    def test_symmetric_pair_site_at_endpoint(self):
        delta = 0.8
        pts = np.array([[-delta], [delta]])
        rep = poisedness(np.zeros(1), pts, total_degree_set(1, 1))
        site = refinement_site(rep)
        assert abs(abs(site[0]) - delta) < 0.05 * delta


class TestErrorIndicator:
    def test_zero_radius(self):
        assert error_indicator(0.0, 3) == 0.0

    def test_arithmetic(self):
        assert error_indicator(0.5, 2) == pytest.approx(0.125)
        assert error_indicator(2.0, 1) == pytest.approx(4.0)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            error_indicator(-0.1, 2)


class TestErrorBoundScaling:
    """Halving the ball radius contracts the max fit error by ~2^(p+1)."""

    @pytest.mark.parametrize("degree", [1, 2, 3])
    def test_sin_order_of_convergence(self, degree):
        center = 0.7
        k = 2 * (degree + 1)
        mset = total_degree_set(1, degree)

        def max_error(delta):
            offs = np.linspace(-delta, delta, k)
            pts = (center + offs)[:, None]
            vals = np.sin(pts[:, 0])
            f = fit(np.array([center]), pts, vals, mset)
            xs = np.linspace(center - delta, center + delta, 400)
            errs = [abs(evaluate(f, [x]) - math.sin(x)) for x in xs]
            return max(errs)

        e1 = max_error(0.4)
        e2 = max_error(0.2)
        ratio = e1 / e2
        assert 2.0 ** degree <= ratio <= 2.0 ** (degree + 2)


class TestPolynomialReproductionProperty:
    def test_random_polynomials_reproduced(self):
        rng = np.random.default_rng(12)
        for d, p in [(1, 2), (2, 2), (3, 1)]:
            mset = total_degree_set(d, p)
            k = mset.q + 4
            for _ in range(5):
                pts = rng.normal(size=(k, d))
                x = rng.normal(size=d) * 0.2
                coef_true = rng.normal(size=mset.q)
                radius = np.linalg.norm(pts - x, axis=1).max()
                frame = LocalFrame(center=x, scale=radius)
                vals = eval_basis_many(mset, frame, pts) @ coef_true
                f = fit(x, pts, vals, mset)
                for _ in range(5):
                    y = x + rng.uniform(-1, 1, size=d) * radius / math.sqrt(d)
                    expected = float(
                        eval_basis_many(mset, frame, y[None, :])[0] @ coef_true
                    )
                    got = evaluate(f, y)
                    assert abs(got - expected) <= 1e-8 * (1 + abs(expected))
