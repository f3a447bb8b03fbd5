"""Attention filter, locality mask, spectral clustering, pattern means."""

import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patsel import (
    BundleFormatError,
    ExtractionConfig,
    SemanticPatternSet,
    attention_filter,
    compute_patterns,
    cosine_distance,
    extract_bundle_patterns,
    extract_image_patterns,
    locality_mask,
    make_rng,
    read_patterns,
    spectral_cluster,
    write_patterns,
)
from conftest import make_record, softmax, two_block_similarity
from oracles import chebyshev_mask_oracle, filter_prefix_oracle


def partitions_equal(a, b):
    """Same grouping up to label permutation."""
    a = np.asarray(a)
    b = np.asarray(b)
    return len(set(zip(a.tolist(), b.tolist()))) == len(set(a.tolist())) == len(set(b.tolist()))


class TestAttentionFilter:
    def test_uniform_four_regions(self):
        kept = attention_filter([0.25, 0.25, 0.25, 0.25], 0.5)
        assert kept.tolist() == [0, 1]

    def test_dominant_region_forces_one(self):
        kept = attention_filter([0.9, 0.1], 0.5)
        assert kept.tolist() == [0]

    def test_matches_oracle_on_random_softmax(self):
        rng = make_rng(31)
        for _ in range(1000):
            hw = int(rng.integers(2, 40))
            ca = softmax(rng.normal(size=hw))
            assert attention_filter(ca, 0.5).tolist() == filter_prefix_oracle(ca, 0.5)

    def test_exhaustive_six_region_permutations(self):
        base = [0.05, 0.1, 0.15, 0.2, 0.24, 0.26]
        for perm in itertools.permutations(base):
            ca = np.array(perm)
            assert attention_filter(ca, 0.5).tolist() == filter_prefix_oracle(ca, 0.5)

    def test_ties_break_by_ascending_index(self):
        kept = attention_filter([0.2, 0.3, 0.2, 0.3], 0.85)
        assert kept.tolist() == [1, 3, 0]

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=20),
           st.floats(0.01, 0.99))
    def test_oracle_property(self, weights, tau):
        ca = np.asarray(weights)
        ca = ca / ca.sum()
        assert attention_filter(ca, tau).tolist() == filter_prefix_oracle(ca, tau)


class TestLocalityMask:
    def test_large_radius_is_plain_submatrix(self):
        rec = make_record("m", grid_h=3, grid_w=4, feat_dim=2, seed=1)
        filtered = attention_filter(rec.cls_attention, 0.5)
        out = locality_mask(rec.patch_attention, filtered, d0=3, grid_h=3, grid_w=4)
        sub = np.asarray(rec.patch_attention, dtype=np.float64)[np.ix_(filtered, filtered)]
        assert np.array_equal(out, sub)

    def test_3x3_grid_corner_neighborhood(self):
        pa = softmax(make_rng(2).normal(size=(9, 9)))
        filtered = np.arange(9)
        out = locality_mask(pa, filtered, d0=1, grid_h=3, grid_w=3)
        assert np.array_equal(out, chebyshev_mask_oracle(pa, filtered, 1, 3, 3))
        # corner (0,0): the Chebyshev-1 neighborhood is itself plus (0,1),(1,0),(1,1)
        assert set(np.flatnonzero(out[0]).tolist()) == {0, 1, 3, 4}

    def test_d0_2_on_14x14_rows_bounded_by_25(self):
        rec = make_record("b", grid_h=14, grid_w=14, feat_dim=4, seed=3)
        filtered = np.arange(196)
        out = locality_mask(rec.patch_attention, filtered, d0=2, grid_h=14, grid_w=14)
        assert int((out > 0).sum(axis=1).max()) <= 25

    def test_never_increases_and_zeroes_exactly_far_pairs(self):
        rng = make_rng(4)
        pa = softmax(rng.normal(size=(20, 20)))
        filtered = rng.permutation(20)[:11]
        for d0 in (1, 2, 3):
            out = locality_mask(pa, filtered, d0=d0, grid_h=4, grid_w=5)
            assert np.array_equal(out, chebyshev_mask_oracle(pa, filtered, d0, 4, 5))
            sub = pa[np.ix_(filtered, filtered)]
            assert np.all(out <= sub)

    def test_out_of_range_index_rejected(self):
        with pytest.raises(ValueError):
            locality_mask(np.eye(4), [0, 4], d0=1, grid_h=2, grid_w=2)


class TestSpectralCluster:
    def test_k_one_single_cluster(self):
        sim, _ = two_block_similarity((3, 3), seed=0)
        assert np.all(spectral_cluster(sim, 1, seed=0) == 0)

    def test_disconnected_blocks_exact(self):
        sim = np.zeros((8, 8))
        sim[:4, :4] = 0.8
        sim[4:, 4:] = 0.8
        labels = spectral_cluster(sim, 2, seed=0)
        assert partitions_equal(labels, [0] * 4 + [1] * 4)

    def test_planted_two_blocks_with_noise(self):
        hits = 0
        for trial in range(50):
            rng = make_rng(1000 + trial)
            sizes = (int(rng.integers(3, 10)), int(rng.integers(3, 10)))
            sim, truth = two_block_similarity(sizes, seed=2000 + trial)
            labels = spectral_cluster(sim, 2, seed=7)
            hits += partitions_equal(labels, truth)
        assert hits >= 48

    def test_components_never_share_labels(self):
        rng = make_rng(9)
        for sizes in [(2, 3, 4), (1, 5, 2), (3, 3, 3)]:
            blocks = [rng.uniform(0.5, 1.0, size=(s, s)) for s in sizes]
            t = sum(sizes)
            sim = np.zeros((t, t))
            pos = 0
            truth = []
            for ci, b in enumerate(blocks):
                s = b.shape[0]
                sim[pos:pos + s, pos:pos + s] = 0.5 * (b + b.T)
                truth += [ci] * s
                pos += s
            labels = spectral_cluster(sim, len(sizes), seed=3)
            assert partitions_equal(labels, truth)

    def test_singleton_similarity(self):
        assert spectral_cluster(np.array([[0.5]]), 5, seed=0).tolist() == [0]

    def test_non_finite_rejected(self):
        sim = np.eye(3)
        sim[0, 1] = np.inf
        with pytest.raises(ValueError):
            spectral_cluster(sim, 2, seed=0)

    def test_deterministic(self):
        sim, _ = two_block_similarity((5, 6), seed=13)
        assert np.array_equal(spectral_cluster(sim, 3, seed=5),
                              spectral_cluster(sim, 3, seed=5))


class TestComputePatterns:
    def test_singleton_clusters_reproduce_rows(self):
        rows = make_rng(1).normal(size=(5, 3))
        ps = compute_patterns(rows, np.arange(5))
        assert np.allclose(ps.patterns, rows)
        assert ps.member_counts.tolist() == [1] * 5

    def test_identical_rows_identical_patterns(self):
        v = np.array([1.0, -2.0, 0.5])
        rows = np.tile(v, (6, 1))
        ps = compute_patterns(rows, [0, 1, 0, 2, 1, 2])
        assert np.allclose(ps.patterns, np.tile(v, (3, 1)))

    def test_matches_accumulation_oracle(self):
        rng = make_rng(17)
        rows = rng.normal(size=(40, 6))
        labels = rng.integers(0, 5, size=40)
        labels[:5] = np.arange(5)  # every class nonempty
        ps = compute_patterns(rows, labels)
        for j in range(5):
            acc = np.zeros(6)
            cnt = 0
            for r, lab in zip(rows, labels):
                if lab == j:
                    acc += r
                    cnt += 1
            assert np.abs(ps.patterns[j] - acc / cnt).max() <= 1e-6
            assert ps.member_counts[j] == cnt

    def test_conservation_of_mass(self):
        rng = make_rng(18)
        rows = rng.normal(size=(30, 4))
        labels = rng.integers(0, 3, size=30)
        labels[:3] = np.arange(3)
        ps = compute_patterns(rows, labels)
        assert int(ps.member_counts.sum()) == 30
        weighted = (ps.patterns * ps.member_counts[:, None]).sum(axis=0) / 30
        assert np.abs(weighted - rows.mean(axis=0)).max() <= 1e-6

    def test_empty_class_rejected(self):
        with pytest.raises(ValueError):
            compute_patterns(np.zeros((3, 2)), [0, 0, 2])


def planted_attention_record(seed=0):
    """4x4-grid record with three 2-region categories planted in the
    high-attention positions and attention links only within categories.

    Returns (record, centroids). Built on top of zero-noise synthetic
    features; attention fields are overwritten to concentrate the planted
    categories in the kept regions and to make them spectrally separable.
    """
    rng = make_rng(seed)
    centroids = rng.normal(size=(3, 16))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)

    hw = 16
    planted = [0, 1, 3, 7, 12, 13]      # (0,0),(0,1) | (0,3),(1,3) | (3,0),(3,1)
    category = [0, 0, 1, 1, 2, 2]

    features = rng.normal(size=(hw, 16))
    for pos, cat in zip(planted, category):
        features[pos] = centroids[cat]

    ca = np.full(hw, 0.52 / 10)
    ca[planted] = 0.48 / 6               # top-6 mass 0.48 <= 0.5 < next prefix

    weights = np.full((hw, hw), 0.01)
    np.fill_diagonal(weights, 10.0)
    for a, ca_ in zip(planted, category):
        for b, cb in zip(planted, category):
            if a != b and ca_ == cb:
                weights[a, b] = 10.0
    pa = weights / weights.sum(axis=1, keepdims=True)

    record = make_record("planted", grid_h=4, grid_w=4, feat_dim=16,
                         cls_attention=ca, patch_attention=pa,
                         patch_features=features)
    return record, centroids


class TestExtractImagePatterns:
    def test_paper_defaults_cap_pattern_count(self):
        rec = make_record("d", grid_h=14, grid_w=14, feat_dim=384, seed=5)
        ps = extract_image_patterns(rec, ExtractionConfig(tau=0.5, k_patterns=5, d0=2))
        assert 1 <= ps.k_used <= 5
        assert ps.feat_dim == 384
        assert int(ps.member_counts.sum()) == len(attention_filter(rec.cls_attention, 0.5))

    def test_k_one_is_mean_of_filtered(self):
        rec = make_record("k1", grid_h=4, grid_w=4, feat_dim=8, seed=6)
        ps = extract_image_patterns(rec, ExtractionConfig(tau=0.5, k_patterns=1, d0=2))
        filtered = attention_filter(rec.cls_attention, 0.5)
        expected = np.asarray(rec.patch_features, dtype=np.float64)[filtered].mean(axis=0)
        assert ps.k_used == 1
        assert np.allclose(ps.patterns[0], expected)

    def test_planted_categories_recovered(self):
        rec, centroids = planted_attention_record(seed=40)
        ps = extract_image_patterns(rec, ExtractionConfig(tau=0.5, k_patterns=3, d0=1))
        assert ps.k_used == 3
        matched = set()
        for pattern in ps.patterns:
            dists = [cosine_distance(pattern, c) for c in centroids]
            best = int(np.argmin(dists))
            assert dists[best] <= 0.05
            matched.add(best)
        assert matched == {0, 1, 2}

    def test_bitwise_deterministic(self):
        rec = make_record("det", grid_h=6, grid_w=6, feat_dim=12, seed=8)
        cfg = ExtractionConfig(tau=0.5, k_patterns=4, d0=2, seed=3)
        a = extract_image_patterns(rec, cfg)
        b = extract_image_patterns(rec, cfg)
        assert a == b


class TestBundleExtraction:
    def records(self, n=10):
        return [make_record(f"rec-{i:03d}", grid_h=5, grid_w=5, feat_dim=8, seed=i)
                for i in range(n)]

    def test_order_and_thread_independence(self):
        cfg = ExtractionConfig(tau=0.5, k_patterns=3, d0=2, seed=1)
        recs = self.records()
        seq = list(extract_bundle_patterns(recs, cfg, threads=1))
        par = list(extract_bundle_patterns(recs, cfg, threads=4))
        assert [s.image_id for s in seq] == [r.image_id for r in recs]
        assert seq == par

    def test_progress_callback(self):
        cfg = ExtractionConfig(seed=0)
        seen = []
        list(extract_bundle_patterns(self.records(4), cfg, threads=2,
                                     progress=lambda i, name: seen.append((i, name))))
        assert [i for i, _ in seen] == [1, 2, 3, 4]


class TestPatternsFile:
    def sets(self):
        rng = make_rng(3)
        return [SemanticPatternSet(image_id=f"s{i}",
                                   patterns=rng.normal(size=(i + 1, 6)),
                                   member_counts=np.arange(1, i + 2, dtype=np.int64))
                for i in range(4)]

    def test_roundtrip_byte_identical(self):
        buf = io.BytesIO()
        write_patterns(self.sets(), buf)
        first = buf.getvalue()
        buf.seek(0)
        loaded = list(read_patterns(buf))
        assert [s.image_id for s in loaded] == ["s0", "s1", "s2", "s3"]
        again = io.BytesIO()
        write_patterns(loaded, again)
        assert again.getvalue() == first

    def test_bad_magic(self):
        with pytest.raises(BundleFormatError, match="magic"):
            list(read_patterns(io.BytesIO(b"XXXX\x01\x00\x00\x00")))

    def test_truncation(self):
        buf = io.BytesIO()
        write_patterns(self.sets(), buf)
        data = buf.getvalue()
        with pytest.raises(BundleFormatError, match="truncated"):
            list(read_patterns(io.BytesIO(data[:-3])))

    def test_counts_roundtrip(self):
        buf = io.BytesIO()
        write_patterns(self.sets(), buf)
        buf.seek(0)
        loaded = list(read_patterns(buf))
        assert loaded[3].member_counts.tolist() == [1, 2, 3, 4]
