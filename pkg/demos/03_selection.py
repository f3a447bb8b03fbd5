"""Selection strategies compared on a pool with planted rare categories.

Distance-proportional sampling and farthest-distance sampling hunt down the
rare categories almost immediately; uniform random needs a far larger budget
to stumble onto them.
"""

import numpy as np

from patsel import make_rng, select_fds, select_prob, select_random
from patsel.selection import CandidatePool
from patsel.pattern_extraction import SemanticPatternSet

rng = make_rng(11)
NUM_IMAGES = 600
NUM_CATEGORIES = 12
D = 24

centroids = rng.normal(size=(NUM_CATEGORIES, D))
centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)

# Skewed category sizes: a few huge categories, a long tail of rare ones.
weights = 1.0 / np.arange(1, NUM_CATEGORIES + 1)
weights /= weights.sum()
cats = np.concatenate([
    np.arange(NUM_CATEGORIES),
    rng.choice(NUM_CATEGORIES, size=NUM_IMAGES - NUM_CATEGORIES, p=weights),
])
cats = cats[rng.permutation(NUM_IMAGES)]
sizes = np.bincount(cats)
print("category sizes:", sizes.tolist())

sets = [SemanticPatternSet(image_id=f"img-{i:04d}",
                           patterns=centroids[c] + 1e-3 * rng.normal(size=(2, D)),
                           member_counts=np.ones(2, dtype=np.int64))
        for i, c in enumerate(cats)]
pool = CandidatePool.from_pattern_sets(sets)
id_to_cat = dict(zip(pool.image_ids, cats))


def coverage_curve(order):
    seen = set()
    curve = []
    for image_id in order:
        seen.add(id_to_cat[image_id])
        curve.append(len(seen))
    return curve


orders = {
    "prob": select_prob(pool, NUM_IMAGES, seed=0).image_ids,
    "fds": select_fds(pool, NUM_IMAGES, seed=0).image_ids,
    "random": select_random(pool.image_ids, NUM_IMAGES, seed=0).image_ids,
}

print(f"\n{'budget':>8} " + " ".join(f"{name:>8}" for name in orders))
curves = {name: coverage_curve(order) for name, order in orders.items()}
for budget in (5, 10, 15, 20, 30, 50, 100, 200):
    row = " ".join(f"{curves[name][budget - 1]:>8}" for name in orders)
    print(f"{budget:>8} {row}")

for name, curve in curves.items():
    full = next(i + 1 for i, c in enumerate(curve) if c == NUM_CATEGORIES)
    print(f"{name}: all {NUM_CATEGORIES} categories covered at budget {full}")
