import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedbandit import checks
from fedbandit.errors import DimensionTooLarge, InvalidCorruptionBound, NoConvergence
from fedbandit.robust_agg import (GroupPartition, PointCloud, aggregate, arithmetic_mean,
                                  brute_force_gm, geometric_median, geometric_median_matrices,
                                  gm_objective, gm_of_means, group_means, partition_agents)
from fedbandit.schedules import c_alpha

# Fermat point of the right triangle (0,0), (1,0), (0,1): t = (3 - sqrt 3) / 6 on the diagonal
FERMAT_T = 0.21132486540518713

coord = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


@st.composite
def clouds(draw, max_n=12, max_d=4):
    n = draw(st.integers(1, max_n))
    d = draw(st.integers(1, max_d))
    return draw(arrays(float, (n, d), elements=coord))


class TestPointCloud:
    def test_coerces_malformed_to_zero(self):
        c = PointCloud.from_points([[1.0, 2.0], [np.nan, 1.0], [1.0, 2.0, 3.0], "junk", [3.0, 4.0]])
        assert c.dim == 2
        assert np.array_equal(c.points[1:4], np.zeros((3, 2)))
        assert list(c.coerced) == [False, True, True, True, False]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            PointCloud.from_points([])


class TestArithmeticMean:
    def test_examples(self):
        assert np.allclose(arithmetic_mean([[1, 0], [0, 1]]), [0.5, 0.5])
        assert np.allclose(arithmetic_mean([[2.5, -1.0]] * 4), [2.5, -1.0])
        assert np.allclose(arithmetic_mean([[1, 2], [3, 4], [5, 0]]), [3, 2])


class TestGeometricMedian:
    def test_identical_points_exact(self):
        z = np.array([0.3, -7.1, 2.0])
        assert np.array_equal(geometric_median([z] * 5), z)

    def test_one_dimensional_is_median(self):
        assert geometric_median([0.0, 1.0, 10.0]) == pytest.approx([1.0])

    def test_fermat_point(self):
        tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
        assert np.allclose(geometric_median(tri, 1e-12), [FERMAT_T, FERMAT_T], atol=1e-6)

    def test_fermat_point_brute_force_oracle(self):
        tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
        assert np.allclose(brute_force_gm(tri, 1e-4), [FERMAT_T, FERMAT_T], atol=2e-4)

    def test_majority_point_exact(self):
        pts = [[1.0, 1.0]] * 3 + [[5.0, 0.0], [-2.0, 9.0]]
        res = geometric_median(pts, return_info=True)
        assert res.method == "data-point"
        assert np.array_equal(res.point, [1.0, 1.0])

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            geometric_median([[0.0]], eps=0)
        with pytest.raises(ValueError):
            geometric_median([[0.0]], max_iter=0)

    def test_strict_reports_exhausted_budget(self, rng):
        pts = rng.normal(size=(30, 3))
        res = geometric_median(pts, 1e-12, max_iter=1, return_info=True)
        assert not res.converged
        with pytest.raises(NoConvergence):
            geometric_median(pts, 1e-12, max_iter=1, strict=True)

    def test_huge_outliers_close_to_brute_force(self, rng):
        for _ in range(20):
            pts = np.vstack([rng.uniform(-1, 1, size=(5, 2)), rng.normal(size=(2, 2)) * 1e9])
            z = geometric_median(pts)
            zb = brute_force_gm(pts[:5], 1e-4, box=(-np.ones(2), np.ones(2)))
            # outliers only add a near-constant to g inside the box
            assert np.linalg.norm(z) < 2.0
            assert gm_objective(pts, z) <= gm_objective(pts, zb) + 1e-6 + 3e-4

    @given(clouds(), arrays(float, 4, elements=coord))
    def test_translation_equivariance(self, pts, shift):
        c = shift[: pts.shape[1]]
        a = geometric_median(pts + c, 1e-12)
        b = geometric_median(pts, 1e-12) + c
        assert np.allclose(a, b, atol=1e-8 * (1 + np.abs(pts).max() + np.abs(c).max()))

    @given(clouds())
    def test_not_worse_than_any_data_point_or_mean(self, pts):
        z = geometric_median(pts, 1e-6)
        g = gm_objective(pts, z)
        scale = 1 + np.abs(pts).max()
        assert g <= gm_objective(pts, pts.mean(axis=0)) + 1e-6 * scale
        assert g <= min(gm_objective(pts, p) for p in pts) + 1e-6 * scale

    @given(st.data())
    def test_concentration_bound(self, data):
        seed = data.draw(st.integers(0, 2**32 - 1))
        pts, honest = checks.concentration_instance(np.random.default_rng(seed))
        n1 = int((~honest).sum())
        z0 = pts[honest].mean(axis=0)
        dev = np.linalg.norm(pts[honest] - z0, axis=1).mean()
        bound = c_alpha(n1 / len(pts)) * (dev + 1e-6)
        assert np.linalg.norm(geometric_median(pts, 1e-6) - z0) <= bound

    def test_breakdown_sanity(self, rng):
        pts = rng.normal(size=(6, 3))
        far = np.array([1e9, 0.0, 0.0])
        both = np.vstack([pts, far])
        z0 = pts.mean(axis=0)
        dev = np.linalg.norm(pts - z0, axis=1).mean()
        assert np.linalg.norm(geometric_median(both) - z0) <= c_alpha(1 / 7) * (dev + 1e-6)
        assert np.linalg.norm(arithmetic_mean(both) - z0) >= 1e8 / 7


class TestMatrixGM:
    def test_identical_inputs(self):
        M = np.array([[2.0, 0.5], [0.5, 1.0]])
        assert np.allclose(geometric_median_matrices([M] * 4), M)

    def test_diagonal_triangle(self):
        # flattened, the inputs form a right triangle with legs of length 2
        mats = [np.diag([0.0, 0.0]), np.diag([2.0, 0.0]), np.diag([0.0, 2.0])]
        out = geometric_median_matrices(mats, 1e-12)
        assert np.allclose(out, np.diag([2 * FERMAT_T, 2 * FERMAT_T]), atol=1e-6)
        flat = np.array([m.reshape(-1) for m in mats])
        zb = brute_force_gm(flat, 1e-2)
        assert np.allclose(out.reshape(-1), zb, atol=2e-2)

    def test_malformed_coerced_like_zero(self, rng):
        mats = [np.eye(2) * i for i in range(1, 5)]
        a = geometric_median_matrices(mats + [np.full((2, 2), np.nan)])
        b = geometric_median_matrices(mats + [np.zeros((2, 2))])
        assert np.array_equal(a, b)
        c = geometric_median_matrices(mats + [np.zeros((3, 3))])
        assert np.array_equal(a, c)

    def test_output_symmetric(self, rng):
        mats = rng.normal(size=(6, 3, 3))
        out = geometric_median_matrices(mats)
        assert np.array_equal(out, out.T)

    def test_symmetrization_never_hurts(self, rng):
        for _ in range(50):
            a = rng.normal(size=(7, 3, 3))
            mats = (a + a.transpose(0, 2, 1)) / 2
            flat = mats.reshape(7, -1)
            raw = geometric_median(flat)
            sym = geometric_median_matrices(mats)
            assert gm_objective(flat, sym.reshape(-1)) <= gm_objective(flat, raw) + 1e-12


class TestPartition:
    @pytest.mark.parametrize("N,N1,sizes", [(12, 2, [2] * 6), (10, 1, [4, 3, 3]), (8, 0, [8])])
    def test_examples(self, N, N1, sizes):
        p = partition_agents(N, N1, np.random.default_rng(0))
        assert sorted(p.sizes(), reverse=True) == sizes

    def test_invalid_bound(self):
        with pytest.raises(InvalidCorruptionBound):
            partition_agents(5, 2, np.random.default_rng(0))

    @given(st.integers(1, 60), st.integers(0, 20), st.integers(0, 1000))
    def test_cover_and_balance(self, N, N1, seed):
        if 3 * N1 > N:
            return
        p = partition_agents(N, N1, np.random.default_rng(seed))
        allidx = np.sort(np.concatenate(p.groups))
        assert np.array_equal(allidx, np.arange(N))
        assert max(p.sizes()) - min(p.sizes()) <= 1
        assert p.P == max(3 * N1, 1)
        if N1 > 0:
            alpha = N1 / N
            assert math.floor(1 / (3 * alpha)) <= min(p.sizes())
            assert max(p.sizes()) <= math.ceil(1 / (3 * alpha))


class TestGmOfMeans:
    def test_single_group_is_mean(self, rng):
        pts = rng.normal(size=(8, 3))
        p = partition_agents(8, 0, rng)
        assert np.array_equal(gm_of_means(pts, p), pts.mean(axis=0))

    def test_identical_group_means(self):
        pts = np.array([[0.0, 0.0], [2.0, 2.0], [1.0, 1.0], [1.0, 1.0]])
        p = GroupPartition((np.array([0, 1]), np.array([2, 3])))
        assert np.allclose(gm_of_means(pts, p), [1.0, 1.0])

    def test_composition_by_hand(self, rng):
        pts = rng.normal(size=(9, 2))
        p = partition_agents(9, 1, rng)
        means = np.stack([pts[g].mean(axis=0) for g in p.groups])
        assert np.allclose(gm_of_means(pts, p), geometric_median(means), atol=0)
        assert np.array_equal(group_means(pts, p), means)

    def test_singleton_groups_match_gm(self, rng):
        pts = rng.normal(size=(9, 3))
        p = GroupPartition(tuple(np.array([i]) for i in range(9)))
        z1, z2 = gm_of_means(pts, p), geometric_median(pts)
        assert abs(gm_objective(pts, z1) - gm_objective(pts, z2)) <= 2e-6

    def test_partition_must_cover(self, rng):
        with pytest.raises(ValueError):
            gm_of_means(rng.normal(size=(4, 2)), GroupPartition((np.array([0, 1]),)))


class TestBruteForce:
    def test_single_point(self):
        assert np.allclose(brute_force_gm([[0.3, -0.2]], 1e-4), [0.3, -0.2], atol=1e-4)

    def test_one_dimensional(self):
        assert np.allclose(brute_force_gm([[0.0], [1.0], [10.0]], 1e-4), [1.0], atol=1e-4)

    def test_rectangle_center(self):
        pts = [[0, 0], [4, 0], [0, 3], [4, 3]]
        assert np.allclose(brute_force_gm(pts, 1e-3), [2.0, 1.5], atol=1e-3)

    def test_dimension_limit(self):
        with pytest.raises(DimensionTooLarge):
            brute_force_gm(np.zeros((3, 5)), 0.1)

    def test_lexicographic_tie_break(self):
        # every point of [0, 1] minimizes g for {0, 1}; the lowest grid point wins
        assert brute_force_gm([[0.0], [1.0]], 0.25)[0] == pytest.approx(0.0, abs=1e-12)


class TestAggregate:
    def test_dispatch(self, rng):
        pts = rng.normal(size=(6, 2))
        assert np.array_equal(aggregate(pts, "mean"), pts.mean(axis=0))
        assert np.array_equal(aggregate(pts, "gm"), geometric_median(pts))
        with pytest.raises(ValueError):
            aggregate(pts, "gm-of-means")
        with pytest.raises(ValueError):
            aggregate(pts, "trimmed")

    def test_matrix_output_symmetric(self, rng):
        mats = rng.normal(size=(5, 3, 3))
        out = aggregate(mats, "gm")
        assert np.array_equal(out, out.T)
