"""Semantic pattern extraction, stage by stage, on one crafted image.

The pipeline keeps the regions holding the top share of class-token attention
mass, zeroes attention between far-apart patches, clusters the kept regions
spectrally on the masked similarity, and averages each cluster's features.
"""

import numpy as np

from patsel import (
    ExtractionConfig,
    ImageRecord,
    attention_filter,
    compute_patterns,
    cosine_distance,
    extract_image_patterns,
    locality_mask,
    make_rng,
    spectral_cluster,
)

rng = make_rng(3)
GRID = 4
HW = GRID * GRID
D = 16

# Three "objects", two patches each, parked in separate grid corners so the
# locality mask disconnects them from one another.
planted = [0, 1, 3, 7, 12, 13]
category = [0, 0, 1, 1, 2, 2]
centroids = rng.normal(size=(3, D))
centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)

features = rng.normal(size=(HW, D))
for pos, cat in zip(planted, category):
    features[pos] = centroids[cat]

# The planted regions get the dominant attention mass (together just under
# the keep ratio of 0.5), so the filter keeps exactly those six.
ca = np.full(HW, 0.52 / (HW - 6))
ca[planted] = 0.48 / 6

# Patch-pair attention links object patches to each other, everything else
# is background noise; rows normalized to sum to 1.
weights = np.full((HW, HW), 0.01)
np.fill_diagonal(weights, 10.0)
for a, cat_a in zip(planted, category):
    for b, cat_b in zip(planted, category):
        if a != b and cat_a == cat_b:
            weights[a, b] = 10.0
pa = weights / weights.sum(axis=1, keepdims=True)

record = ImageRecord(
    image_id="demo", grid_h=GRID, grid_w=GRID, feat_dim=D,
    cls_feature=(features.mean(axis=0)).astype(np.float32),
    cls_attention=ca.astype(np.float32),
    patch_attention=pa.astype(np.float32),
    patch_features=features.astype(np.float32),
)

# Stage 1: attention filter.
kept = attention_filter(record.cls_attention, tau=0.5)
print("kept regions:", sorted(kept.tolist()), "(planted:", planted, ")")

# Stage 2: locality mask. Cross-object entries die because the objects sit
# farther than Chebyshev distance 1 apart.
sim = locality_mask(record.patch_attention, kept, d0=1, grid_h=GRID, grid_w=GRID)
print("masked similarity nonzeros per row:", (sim > 0).sum(axis=1).tolist())

# Stage 3: spectral clustering on the masked similarity.
labels = spectral_cluster(sim, 3, seed=0)
print("cluster labels in kept order:", labels.tolist())

# Stage 4: cluster means are the image's semantic patterns. Work from the
# record's float32 features, exactly like the composite call does.
stored = np.asarray(record.patch_features, dtype=np.float64)
patterns = compute_patterns(stored[kept], labels, image_id=record.image_id)
print("member counts:", patterns.member_counts.tolist())
for i, pattern in enumerate(patterns.patterns):
    nearest = min(range(3), key=lambda c: cosine_distance(pattern, centroids[c]))
    print(f"  pattern {i} -> planted centroid {nearest} "
          f"(cosine distance {cosine_distance(pattern, centroids[nearest]):.2e})")

# The one-call composite runs the same four stages.
ps = extract_image_patterns(record, ExtractionConfig(tau=0.5, k_patterns=3, d0=1))
print("composite equals staged run:", np.array_equal(ps.patterns, patterns.patterns))
