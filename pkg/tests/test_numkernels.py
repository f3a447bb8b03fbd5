"""Eigensolver, k-means and distance kernels against independent oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patsel import (
    cosine_distance,
    euclidean_distance,
    kmeans,
    make_rng,
    sym_eigen_smallest,
)
from patsel.numkernels import kmeans_objective
from oracles import (
    charpoly_eigenvalues_oracle,
    mp_cosine_distance,
    mp_euclidean_distance,
)


class TestSymEigenSmallest:
    def test_identity(self):
        pairs = sym_eigen_smallest(np.eye(4), 2)
        assert np.allclose(pairs.values, [1.0, 1.0])

    def test_diagonal_values_and_vectors(self):
        pairs = sym_eigen_smallest(np.diag([3.0, 1.0, 2.0]), 2)
        assert np.allclose(pairs.values, [1.0, 2.0])
        assert np.allclose(np.abs(pairs.vectors[:, 0]), [0, 1, 0], atol=1e-12)
        assert np.allclose(np.abs(pairs.vectors[:, 1]), [0, 0, 1], atol=1e-12)

    def test_random_6x6_matches_charpoly_oracle(self):
        rng = make_rng(123)
        for trial in range(5):
            a = rng.normal(size=(6, 6))
            a = 0.5 * (a + a.T)
            pairs = sym_eigen_smallest(a, 6)
            expected = charpoly_eigenvalues_oracle(a)
            assert np.abs(pairs.values - expected).max() <= 1e-8

    def test_residual_and_orthogonality_bounds(self):
        rng = make_rng(77)
        for _ in range(60):
            n = int(rng.integers(2, 60))
            a = rng.normal(size=(n, n))
            a = 0.5 * (a + a.T)
            k = int(rng.integers(1, n + 1))
            pairs = sym_eigen_smallest(a, k)
            fro = np.linalg.norm(a, "fro")
            residual = a @ pairs.vectors - pairs.vectors * pairs.values
            assert np.linalg.norm(residual, axis=0).max() <= 1e-6 * fro
            gram = pairs.vectors.T @ pairs.vectors
            assert np.abs(gram - np.eye(k)).max() <= 1e-6
            assert np.all(np.diff(pairs.values) >= -1e-12)

    def test_sign_convention_deterministic(self):
        rng = make_rng(5)
        a = rng.normal(size=(8, 8))
        a = 0.5 * (a + a.T)
        first = sym_eigen_smallest(a, 8)
        second = sym_eigen_smallest(a.copy(), 8)
        assert np.array_equal(first.vectors, second.vectors)
        for j in range(8):
            col = first.vectors[:, j]
            lead = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0]
            assert col[lead] > 0

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            sym_eigen_smallest(np.eye(3), 4)
        with pytest.raises(ValueError):
            sym_eigen_smallest(np.eye(3), 0)

    def test_non_finite_rejected(self):
        a = np.eye(3)
        a[0, 1] = np.nan
        with pytest.raises(ValueError):
            sym_eigen_smallest(a, 1)

    def test_n_equals_one(self):
        pairs = sym_eigen_smallest(np.array([[4.0]]), 1)
        assert pairs.values[0] == pytest.approx(4.0)
        assert pairs.vectors[0, 0] == pytest.approx(1.0)


class TestKmeans:
    def test_k_equals_m_is_permutation(self):
        pts = make_rng(1).normal(size=(7, 3))
        labels = kmeans(pts, 7, seed=4)
        assert sorted(labels.tolist()) == list(range(7))

    def test_k_one_single_cluster(self):
        pts = make_rng(2).normal(size=(9, 3))
        assert np.all(kmeans(pts, 1, seed=0) == 0)

    def test_planted_two_centers_recovered(self):
        rng = make_rng(3)
        a = rng.normal(size=(10, 4)) * 0.05 + np.array([5.0, 0, 0, 0])
        b = rng.normal(size=(10, 4)) * 0.05 - np.array([5.0, 0, 0, 0])
        pts = np.vstack([a, b])
        labels = kmeans(pts, 2, seed=9)
        assert len(set(labels[:10])) == 1
        assert len(set(labels[10:])) == 1
        assert labels[0] != labels[10]

    def test_objective_non_increasing(self):
        pts = make_rng(6).normal(size=(80, 5))
        history = []
        kmeans(pts, 6, seed=2, on_iteration=history.append)
        objectives = [kmeans_objective(pts, lab) for lab in history]
        assert all(b <= a + 1e-9 for a, b in zip(objectives, objectives[1:]))

    def test_duplicates_all_clusters_nonempty(self):
        pts = np.zeros((6, 2))
        labels = kmeans(pts, 4, seed=0)
        assert set(labels.tolist()) == {0, 1, 2, 3}

    def test_deterministic_given_seed(self):
        pts = make_rng(8).normal(size=(30, 4))
        assert np.array_equal(kmeans(pts, 5, seed=11), kmeans(pts, 5, seed=11))

    def test_k_greater_than_m_rejected(self):
        with pytest.raises(ValueError):
            kmeans(np.zeros((3, 2)), 4, seed=0)


class TestDistances:
    def test_cosine_identical(self):
        v = np.array([0.3, -1.2, 4.0])
        assert cosine_distance(v, v) == pytest.approx(0.0, abs=1e-12)

    def test_cosine_orthogonal_units(self):
        assert cosine_distance([1, 0], [0, 1]) == pytest.approx(1.0)

    def test_cosine_opposite(self):
        assert cosine_distance([1.0, 0.0], [-1.0, 0.0]) == pytest.approx(2.0)

    def test_cosine_matches_extended_precision(self):
        rng = make_rng(21)
        for _ in range(50):
            a = rng.normal(size=16)
            b = rng.normal(size=16)
            assert cosine_distance(a, b) == pytest.approx(
                mp_cosine_distance(a, b), abs=1e-7)

    def test_cosine_zero_norm_rejected(self):
        with pytest.raises(ValueError):
            cosine_distance([0.0, 0.0], [1.0, 0.0])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=8),
           st.floats(1e-3, 1e3))
    def test_cosine_scale_invariance(self, vec, scale):
        # magnitudes kept well clear of subnormal underflow, where the
        # floating-point identity genuinely degrades
        a = np.asarray(vec)
        a[np.abs(a) < 1e-3] = 0.0
        if np.linalg.norm(a) == 0:
            return
        assert cosine_distance(a, scale * a) <= 1e-12

    def test_euclidean_identical(self):
        v = np.array([1.0, 2.0, 3.0])
        assert euclidean_distance(v, v) == 0.0

    def test_euclidean_unit_axes(self):
        assert euclidean_distance([1, 0], [0, 1]) == pytest.approx(np.sqrt(2))

    def test_euclidean_matches_extended_precision(self):
        rng = make_rng(22)
        for _ in range(50):
            a = rng.normal(size=16)
            b = rng.normal(size=16)
            assert euclidean_distance(a, b) == pytest.approx(
                mp_euclidean_distance(a, b), abs=1e-7)
