"""Shared builders for records, similarity matrices and pattern pools."""

from __future__ import annotations

import numpy as np
import pytest

from patsel import CandidatePool, ImageRecord, SemanticPatternSet, make_rng


def softmax(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def make_record(image_id="img", grid_h=3, grid_w=3, feat_dim=4, seed=0,
                cls_attention=None, patch_attention=None, patch_features=None,
                cls_feature=None):
    """A valid record with softmax-normalized attentions; any field can be
    overridden (overrides are cast to float32, not re-checked)."""
    rng = make_rng(seed)
    hw = grid_h * grid_w
    ca = softmax(rng.normal(size=hw)) if cls_attention is None else np.asarray(cls_attention)
    pa = softmax(rng.normal(size=(hw, hw))) if patch_attention is None else np.asarray(patch_attention)
    f = rng.normal(size=(hw, feat_dim)) if patch_features is None else np.asarray(patch_features)
    cls = rng.normal(size=feat_dim) if cls_feature is None else np.asarray(cls_feature)
    return ImageRecord(
        image_id=image_id, grid_h=grid_h, grid_w=grid_w, feat_dim=feat_dim,
        cls_feature=cls.astype(np.float32),
        cls_attention=ca.astype(np.float32),
        patch_attention=pa.astype(np.float32),
        patch_features=f.astype(np.float32),
    )


def make_global_record(image_id, cls_feature):
    """Minimal 1x1-grid record carrying a chosen whole-image feature."""
    cls = np.asarray(cls_feature, dtype=np.float64)
    return ImageRecord(
        image_id=image_id, grid_h=1, grid_w=1, feat_dim=cls.size,
        cls_feature=cls.astype(np.float32),
        cls_attention=np.array([1.0], dtype=np.float32),
        patch_attention=np.array([[1.0]], dtype=np.float32),
        patch_features=cls.reshape(1, -1).astype(np.float32),
    )


def two_block_similarity(sizes, seed, within=(0.6, 1.0), cross=(0.0, 0.02)):
    """Symmetric planted two-block similarity matrix and its labels."""
    rng = make_rng(seed)
    t = sum(sizes)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    sim = rng.uniform(*cross, size=(t, t))
    same = labels[:, None] == labels[None, :]
    sim[same] = rng.uniform(*within, size=int(same.sum()))
    sim = 0.5 * (sim + sim.T)
    return sim, labels


def pool_from_arrays(pattern_mats, ids=None):
    """CandidatePool from a list of (k_i, d) arrays, one per image."""
    ids = ids or [f"img-{i:04d}" for i in range(len(pattern_mats))]
    sets = [SemanticPatternSet(image_id=name,
                               patterns=np.asarray(m, dtype=np.float64),
                               member_counts=np.ones(len(m), dtype=np.int64))
            for name, m in zip(ids, pattern_mats)]
    return CandidatePool.from_pattern_sets(sets)


def planted_category_pool(num_images, num_categories, feat_dim, seed,
                          patterns_per_image=2, noise=1e-3):
    """Pool of images whose patterns hug one planted category centroid each.

    Category sizes are skewed (roughly 1/rank) with every category populated
    at least once, so uniform-random selection needs far more draws to touch
    the rare ones. Returns (pool, per-image category array).
    """
    rng = make_rng(seed)
    centroids = rng.normal(size=(num_categories, feat_dim))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    weights = 1.0 / np.arange(1, num_categories + 1)
    weights /= weights.sum()
    cats = np.concatenate([
        np.arange(num_categories),
        rng.choice(num_categories, size=num_images - num_categories, p=weights),
    ])
    cats = cats[rng.permutation(num_images)]
    mats = [centroids[c] + noise * rng.normal(size=(patterns_per_image, feat_dim))
            for c in cats]
    return pool_from_arrays(mats), cats


def covering_budget(result_ids, id_to_category, num_categories):
    """First prefix length of the selection order seeing every category."""
    seen = set()
    for i, image_id in enumerate(result_ids):
        seen.add(id_to_category[image_id])
        if len(seen) == num_categories:
            return i + 1
    return len(result_ids) + 1


@pytest.fixture(scope="session", autouse=True)
def _warm_numba():
    # compile the eigensolver kernels once so timed tests measure math,
    # not JIT compilation
    from patsel import sym_eigen_smallest
    sym_eigen_smallest(np.eye(3), 2)
