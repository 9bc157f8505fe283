import itertools
import math

import numpy as np
import pytest

from lamcmc.basis import (
    LocalFrame,
    eval_basis,
    eval_basis_many,
    sparse_set,
    total_degree_set,
)


def brute_force_members(dim, degree, nu):
    """Enumerate the admissible multi-indices directly from the norm rule."""
    out = []
    for alpha in itertools.product(range(degree + 1), repeat=dim):
        if sum(alpha) > degree:
            continue
        if nu == 0.0:
            ok = sum(1 for a in alpha if a > 0) <= 1 and max(alpha) <= degree
        elif nu == 1.0:
            ok = sum(alpha) <= degree
        else:
            nrm = sum(a**nu for a in alpha if a > 0) ** (1.0 / nu) if any(alpha) else 0.0
            ok = nrm <= degree * (1.0 + 1e-9)
        if ok:
            out.append(alpha)
    return set(out)


class TestTotalDegree:
    def test_1d_quadratic(self):
        s = total_degree_set(1, 2)
        assert s.q == 3
        np.testing.assert_array_equal(s.indices, [[0], [1], [2]])

    def test_d10_p1_cardinality(self):
        assert total_degree_set(10, 1).q == 11

    def test_d10_p2_cardinality(self):
        assert total_degree_set(10, 2).q == 66

    def test_binomial_cardinality(self):
        for d, p in [(2, 3), (3, 4), (6, 2)]:
            assert total_degree_set(d, p).q == math.comb(d + p, p)

    def test_zero_index_first(self):
        for d, p in [(1, 0), (3, 2), (5, 3)]:
            s = total_degree_set(d, p)
            assert not s.indices[0].any()

    def test_graded_lex_order(self):
        s = total_degree_set(2, 2)
        expected = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
        assert [tuple(a) for a in s.indices] == expected


class TestSparse:
    def test_paper_table_cardinalities(self):
        assert sparse_set(10, 2, 0.5).q == 21
        assert sparse_set(10, 3, 0.5).q == 31
        assert sparse_set(10, 3, 0.75).q == 76

    def test_nu1_reproduces_total_degree(self):
        for d, p in [(2, 3), (4, 2), (10, 2)]:
            np.testing.assert_array_equal(
                sparse_set(d, p, 1.0).indices, total_degree_set(d, p).indices
            )

    def test_nu0_no_cross_terms(self):
        s = sparse_set(3, 2, 0.0)
        assert s.q == 1 + 3 * 2
        for alpha in s.indices:
            assert (alpha > 0).sum() <= 1

    def test_matches_brute_force_enumeration(self):
        for d in (1, 2, 3, 6):
            for p in (0, 1, 2, 4):
                for nu in (0.0, 0.3, 0.5, 0.75, 1.0):
                    got = {tuple(a) for a in sparse_set(d, p, nu).indices}
                    assert got == brute_force_members(d, p, nu), (d, p, nu)

    def test_cardinality_monotone_in_nu_and_degree(self):
        qs = [sparse_set(5, 3, nu).q for nu in (0.0, 0.25, 0.5, 0.75, 1.0)]
        assert qs == sorted(qs)
        qs_p = [sparse_set(5, p, 0.5).q for p in range(5)]
        assert qs_p == sorted(qs_p)

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            sparse_set(0, 2, 0.5)
        with pytest.raises(ValueError):
            sparse_set(2, -1, 0.5)
        with pytest.raises(ValueError):
            sparse_set(2, 2, 1.5)


class TestEvalBasis:
    def test_at_center_is_indicator_of_constant(self):
        s = total_degree_set(3, 2)
        frame = LocalFrame(center=np.array([0.5, -1.0, 2.0]), scale=0.7)
        phi = eval_basis(s, frame, frame.center)
        expected = np.zeros(s.q)
        expected[0] = 1.0
        np.testing.assert_array_equal(phi, expected)

    def test_1d_monomials(self):
        s = total_degree_set(1, 2)
        frame = LocalFrame(center=np.zeros(1), scale=1.0)
        np.testing.assert_allclose(eval_basis(s, frame, [2.0]), [1.0, 2.0, 4.0])

    def test_2d_scaled_frame_graded_lex(self):
        s = total_degree_set(2, 2)
        frame = LocalFrame(center=np.array([1.0, 1.0]), scale=2.0)
        # z = ((3,5) - (1,1)) / 2 = (1, 2)
        phi = eval_basis(s, frame, [3.0, 5.0])
        np.testing.assert_allclose(phi, [1.0, 1.0, 2.0, 1.0, 2.0, 4.0])

    def test_many_matches_single(self):
        rng = np.random.default_rng(0)
        s = sparse_set(3, 3, 0.5)
        frame = LocalFrame(center=rng.normal(size=3), scale=1.3)
        pts = rng.normal(size=(8, 3))
        block = eval_basis_many(s, frame, pts)
        for i, p in enumerate(pts):
            np.testing.assert_allclose(block[i], eval_basis(s, frame, p), rtol=1e-14)

    def test_frame_validation(self):
        with pytest.raises(ValueError):
            LocalFrame(center=np.zeros(2), scale=0.0)
        with pytest.raises(ValueError):
            LocalFrame(center=np.zeros(2), scale=-1.0)
