"""Diverse image selection over per-image pattern pools.

The core loop starts from one seeded random image, then repeatedly scores all
patterns of still-unselected images by their distance to the nearest already
selected pattern. The probabilistic strategy samples a pattern with
probability proportional to that distance squared; the farthest-distance
strategy takes the argmax. Selecting a pattern selects its owning image and
inserts every pattern of that image into the selected pool. Global baselines
(farthest-distance or k-means over one whole-image feature per image) and
uniform random selection share the same result shape.

The min-distance array is maintained incrementally: adding an image only
requires distances from all pool patterns to the few new patterns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .bundle_io import ImageRecord, PathOrFile, _as_sink
from .numkernels import kmeans
from .pattern_extraction import SemanticPatternSet
from .rng import make_rng

DISTANCES = ("cosine", "euclidean")
STRATEGIES = ("prob", "fds", "global-fds", "kmeans", "random")


@dataclass(eq=False)
class CandidatePool:
    """Flat pattern matrix plus the pattern-to-image ownership mapping.

    Patterns of one image occupy a contiguous row range, in image order, so
    flat pattern indices are reproducible across runs.
    """

    image_ids: list[str]
    patterns: np.ndarray               # (P, d) float64
    owner: np.ndarray                  # (P,) int64, pattern row -> image index
    image_slices: list[tuple[int, int]]

    @property
    def num_images(self) -> int:
        return len(self.image_ids)

    @property
    def num_patterns(self) -> int:
        return self.patterns.shape[0]

    def patterns_of(self, image_index: int) -> np.ndarray:
        a, b = self.image_slices[image_index]
        return self.patterns[a:b]

    @classmethod
    def from_pattern_sets(cls, pattern_sets: Iterable[SemanticPatternSet]) -> "CandidatePool":
        ids: list[str] = []
        mats: list[np.ndarray] = []
        slices: list[tuple[int, int]] = []
        start = 0
        for ps in pattern_sets:
            mat = np.asarray(ps.patterns, dtype=np.float64)
            if mat.ndim != 2 or mat.shape[0] < 1:
                raise ValueError(f"image {ps.image_id!r} has no patterns")
            ids.append(ps.image_id)
            mats.append(mat)
            slices.append((start, start + mat.shape[0]))
            start += mat.shape[0]
        return cls._build(ids, mats, slices)

    @classmethod
    def from_global_features(cls, image_ids: Sequence[str],
                             features) -> "CandidatePool":
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != len(image_ids):
            raise ValueError("features must be one row per image id")
        mats = [feats[i:i + 1] for i in range(feats.shape[0])]
        slices = [(i, i + 1) for i in range(feats.shape[0])]
        return cls._build(list(image_ids), mats, slices)

    @classmethod
    def _build(cls, ids, mats, slices) -> "CandidatePool":
        if not ids:
            raise ValueError("pool needs at least one image")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate image ids in pool")
        dims = {m.shape[1] for m in mats}
        if len(dims) != 1:
            raise ValueError(f"pattern dims differ across images: {sorted(dims)}")
        patterns = np.vstack(mats)
        if not np.isfinite(patterns).all():
            raise ValueError("pool patterns have non-finite entries")
        counts = [m.shape[0] for m in mats]
        owner = np.repeat(np.arange(len(ids), dtype=np.int64), counts)
        return cls(image_ids=ids, patterns=patterns, owner=owner,
                   image_slices=slices)


@dataclass
class SelectionState:
    """Incrementally maintained nearest-selected-pattern distances."""

    min_dist: np.ndarray          # (P,) float64, +inf before any selection
    selected_images: list[int] = field(default_factory=list)
    selected_pattern_count: int = 0


def new_selection_state(pool: CandidatePool) -> SelectionState:
    return SelectionState(min_dist=np.full(pool.num_patterns, np.inf))


@dataclass(frozen=True)
class SelectionStep:
    """Audit record for one selection step.

    pattern_index / min_dist / mass are None for steps that did not sample a
    pattern (the initial image, uniform fallback, and non-pattern strategies).
    """

    step: int
    image_id: str
    pattern_index: int | None
    min_dist: float | None
    mass: float | None


@dataclass(eq=False)
class SelectionResult:
    strategy: str
    distance: str | None
    budget: int
    seed: int
    image_ids: list[str]
    steps: list[SelectionStep]
    pool_images: int
    pool_patterns: int


def _unit_rows(x: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"cosine distance undefined: zero-norm {what} "
                         f"at row {int(zero[0])}")
    return x / norms[:, None]


# distances this far below working precision are rounding residue of the
# matmul-based formulas; snapping them to 0 restores exact-zero semantics for
# duplicate patterns (zero sampling mass, covering radius 0)
_SNAP = 4.0 * np.finfo(np.float64).eps


class _DistanceKernel:
    """Distances from every pool pattern to small blocks of new patterns."""

    def __init__(self, patterns: np.ndarray, distance: str):
        if distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}, got {distance!r}")
        self.distance = distance
        self.patterns = patterns
        if distance == "cosine":
            self.unit = _unit_rows(patterns, "pool pattern")
        else:
            self.sq = (patterns * patterns).sum(axis=1)

    def min_dist_to(self, new_patterns: np.ndarray) -> np.ndarray:
        """(P,) min distance from each pool pattern to the new block."""
        if self.distance == "cosine":
            v = _unit_rows(new_patterns, "new pattern")
            d = 1.0 - self.unit @ v.T
            d[d < _SNAP] = 0.0
            np.clip(d, 0.0, 2.0, out=d)
        else:
            sq_new = (new_patterns * new_patterns).sum(axis=1)
            d2 = self.sq[:, None] + sq_new[None, :] - 2.0 * self.patterns @ new_patterns.T
            d2[d2 < _SNAP * (self.sq[:, None] + sq_new[None, :])] = 0.0
            d = np.sqrt(np.maximum(d2, 0.0))
        return d.min(axis=1)


def update_min_dist(state: SelectionState, new_patterns, pool: CandidatePool,
                    distance: str = "cosine") -> SelectionState:
    """Fold a block of newly selected patterns into state.min_dist.

    Each entry becomes min(previous, min over new patterns of D(p, new)); an
    empty block leaves the state untouched.
    """
    block = np.asarray(new_patterns, dtype=np.float64)
    if block.size == 0:
        return state
    if block.ndim != 2 or block.shape[1] != pool.patterns.shape[1]:
        raise ValueError(f"new patterns shape {block.shape} does not match "
                         f"pool dim {pool.patterns.shape[1]}")
    kernel = _DistanceKernel(pool.patterns, distance)
    np.minimum(state.min_dist, kernel.min_dist_to(block), out=state.min_dist)
    state.selected_pattern_count += block.shape[0]
    return state


def _distance_selection(pool: CandidatePool, budget: int, seed: int,
                        distance: str, probabilistic: bool, strategy: str,
                        initial_image: int | None = None) -> SelectionResult:
    n = pool.num_images
    if not 1 <= budget <= n:
        raise ValueError(f"budget must be in [1, {n}], got {budget}")
    kernel = _DistanceKernel(pool.patterns, distance)
    rng = make_rng(seed)
    num_patterns = pool.num_patterns

    min_dist = np.full(num_patterns, np.inf)
    active = np.ones(num_patterns, dtype=bool)  # sampling eligibility
    selected = np.zeros(n, dtype=bool)
    order: list[int] = []
    steps: list[SelectionStep] = []

    def add_image(img: int) -> None:
        selected[img] = True
        order.append(img)
        a, b = pool.image_slices[img]
        active[a:b] = False
        np.minimum(min_dist, kernel.min_dist_to(pool.patterns[a:b]), out=min_dist)

    if initial_image is None:
        first = int(rng.integers(n))
    else:
        if not 0 <= initial_image < n:
            raise ValueError(f"initial_image out of range [0, {n})")
        first = initial_image
    steps.append(SelectionStep(0, pool.image_ids[first], None, None, None))
    add_image(first)

    while len(order) < budget:
        step_no = len(order)
        if probabilistic:
            masses = np.where(active, min_dist * min_dist, 0.0)
            cum = np.cumsum(masses)
            total = float(cum[-1])
            if total <= 0.0:
                # every remaining pattern is already covered exactly:
                # uniform fallback over remaining images
                remaining = np.flatnonzero(~selected)
                img = int(remaining[int(rng.integers(remaining.size))])
                steps.append(SelectionStep(step_no, pool.image_ids[img],
                                           None, 0.0, 0.0))
            else:
                target = rng.random() * total
                p = int(np.searchsorted(cum, target, side="right"))
                if p >= num_patterns:
                    p = int(np.flatnonzero(masses > 0)[-1])
                img = int(pool.owner[p])
                steps.append(SelectionStep(step_no, pool.image_ids[img], p,
                                           float(min_dist[p]), total))
        else:
            cand = np.where(active, min_dist, -1.0)
            p = int(np.argmax(cand))  # ties: lowest flat pattern index
            img = int(pool.owner[p])
            steps.append(SelectionStep(step_no, pool.image_ids[img], p,
                                       float(min_dist[p]), None))
        add_image(img)

    return SelectionResult(
        strategy=strategy, distance=distance, budget=budget, seed=seed,
        image_ids=[pool.image_ids[i] for i in order], steps=steps,
        pool_images=n, pool_patterns=num_patterns)


def select_prob(pool: CandidatePool, budget: int, seed: int,
                distance: str = "cosine",
                initial_image: int | None = None) -> SelectionResult:
    """Distance-squared-proportional sampling at the pattern level.

    After the seeded initial image, each step samples one candidate pattern
    with probability proportional to the square of its distance to the
    nearest selected pattern, then selects the owning image and all of its
    patterns. Patterns of selected images are hard-excluded from sampling.
    initial_image overrides the seeded initial draw (diagnostics/tests).
    """
    return _distance_selection(pool, budget, seed, distance, True, "prob",
                               initial_image)


def select_fds(pool: CandidatePool, budget: int, seed: int,
               distance: str = "cosine",
               initial_image: int | None = None) -> SelectionResult:
    """Farthest-distance sampling: deterministic argmax of the min distance."""
    return _distance_selection(pool, budget, seed, distance, False, "fds",
                               initial_image)


def _collect_global(records: Iterable[ImageRecord]) -> tuple[list[str], np.ndarray]:
    ids: list[str] = []
    feats: list[np.ndarray] = []
    for rec in records:
        ids.append(rec.image_id)
        feats.append(np.asarray(rec.cls_feature, dtype=np.float64))
    if not ids:
        raise ValueError("no records")
    return ids, np.vstack(feats)


def select_global_fds(records: Iterable[ImageRecord], budget: int, seed: int,
                      distance: str = "cosine") -> SelectionResult:
    """Farthest-distance sampling over one whole-image feature per image."""
    ids, feats = _collect_global(records)
    pool = CandidatePool.from_global_features(ids, feats)
    result = _distance_selection(pool, budget, seed, distance, False,
                                 "global-fds")
    return result


def select_kmeans_global(records: Iterable[ImageRecord], budget: int,
                         seed: int) -> SelectionResult:
    """k-means the whole-image features with k = budget, then take the image
    nearest each centroid (cosine), skipping already-taken images."""
    ids, feats = _collect_global(records)
    n = len(ids)
    if not 1 <= budget <= n:
        raise ValueError(f"budget must be in [1, {n}], got {budget}")
    labels = kmeans(feats, budget, seed=seed)
    unit = _unit_rows(feats, "cls feature")
    used = np.zeros(n, dtype=bool)
    steps: list[SelectionStep] = []
    chosen: list[int] = []
    for j in range(budget):
        centroid = feats[labels == j].mean(axis=0)
        norm = np.linalg.norm(centroid)
        if norm == 0.0:
            raise ValueError(f"cluster {j} centroid has zero norm")
        d = np.clip(1.0 - unit @ (centroid / norm), 0.0, 2.0)
        for idx in np.argsort(d, kind="stable"):
            if not used[idx]:
                break
        used[idx] = True
        chosen.append(int(idx))
        steps.append(SelectionStep(j, ids[int(idx)], None, float(d[idx]), None))
    return SelectionResult(
        strategy="kmeans", distance="cosine", budget=budget, seed=seed,
        image_ids=[ids[i] for i in chosen], steps=steps,
        pool_images=n, pool_patterns=n)


def select_random(image_ids: Sequence[str], budget: int, seed: int) -> SelectionResult:
    """Seeded uniform sample without replacement."""
    ids = list(image_ids)
    n = len(ids)
    if not 1 <= budget <= n:
        raise ValueError(f"budget must be in [1, {n}], got {budget}")
    picks = make_rng(seed).permutation(n)[:budget]
    steps = [SelectionStep(i, ids[int(p)], None, None, None)
             for i, p in enumerate(picks)]
    return SelectionResult(
        strategy="random", distance=None, budget=budget, seed=seed,
        image_ids=[ids[int(p)] for p in picks], steps=steps,
        pool_images=n, pool_patterns=n)


def selection_summary(result: SelectionResult,
                      wall_time_s: float | None = None) -> dict:
    """Summary object for the audit trail; wall time only when provided, so
    the on-disk trail stays byte-reproducible."""
    summary = {
        "config": {
            "strategy": result.strategy,
            "distance": result.distance,
            "budget": result.budget,
        },
        "seed": result.seed,
        "pool_images": result.pool_images,
        "pool_patterns": result.pool_patterns,
    }
    if wall_time_s is not None:
        summary["wall_time_s"] = wall_time_s
    return {"summary": summary}


def write_selection_jsonl(result: SelectionResult, destination: PathOrFile) -> None:
    """One JSON object per step, then the summary object (no wall time)."""
    sink, owned = _as_sink(destination)
    try:
        for s in result.steps:
            line = json.dumps({"step": s.step, "image_id": s.image_id,
                               "min_dist": s.min_dist, "mass": s.mass})
            sink.write(line.encode("utf-8") + b"\n")
        sink.write(json.dumps(selection_summary(result)).encode("utf-8") + b"\n")
    finally:
        if owned:
            sink.close()


def write_selection_ids(result: SelectionResult, destination: PathOrFile) -> None:
    """Plain-text variant: one selected image id per line, in order."""
    sink, owned = _as_sink(destination)
    try:
        for image_id in result.image_ids:
            sink.write(image_id.encode("utf-8") + b"\n")
    finally:
        if owned:
            sink.close()
