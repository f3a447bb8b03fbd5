"""Per-image semantic pattern extraction.

For one image the stages run in a fixed order: keep the smallest set of
regions that carries a target share of class-token attention mass, zero the
patch-to-patch attention between regions farther apart than a Chebyshev
radius on the feature grid, cluster the kept regions spectrally on that
masked similarity, and average each cluster's feature rows. The resulting
per-image mean vectors ("semantic patterns") are the unit of diversity
sampling downstream.

Patterns file wire format, little-endian:

    magic 4 bytes b"FSPT"; version u32 = 1;
    per record: id_len u32, id bytes (UTF-8), k_used u16, feat_dim u16,
                patterns f32[k_used * feat_dim] row-major,
                member_counts u32[k_used]

There is no record count; readers consume records until end of file.
"""

from __future__ import annotations

import struct
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import BinaryIO, Callable, Iterable, Iterator

import numpy as np

from .bundle_io import BundleFormatError, ImageRecord, PathOrFile, _as_sink, _as_source
from .numkernels import kmeans, sym_eigen_smallest

PATTERNS_MAGIC = b"FSPT"
PATTERNS_VERSION = 1

_PAT_HEADER = struct.Struct("<4sI")
_PAT_DIMS = struct.Struct("<HH")


@dataclass(frozen=True)
class ExtractionConfig:
    """Knobs for pattern extraction.

    tau is the share of class-token attention mass the region filter keeps,
    k_patterns the cluster count ceiling per image, d0 the Chebyshev radius
    below which patch-pair attention survives the locality mask.
    """

    tau: float = 0.5
    k_patterns: int = 5
    d0: int = 2
    degree_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        if self.k_patterns < 1:
            raise ValueError(f"k_patterns must be >= 1, got {self.k_patterns}")
        if self.d0 < 1:
            raise ValueError(f"d0 must be >= 1, got {self.d0}")
        if self.degree_epsilon < 0:
            raise ValueError(f"degree_epsilon must be >= 0, got {self.degree_epsilon}")


@dataclass(eq=False)
class SemanticPatternSet:
    """Per-image cluster-mean feature vectors with their member counts."""

    image_id: str
    patterns: np.ndarray       # (k_used, d) float64
    member_counts: np.ndarray  # (k_used,) int64

    @property
    def k_used(self) -> int:
        return self.patterns.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.patterns.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SemanticPatternSet):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and np.array_equal(self.patterns, other.patterns)
            and np.array_equal(self.member_counts, other.member_counts)
        )


def attention_filter(ca, tau: float) -> np.ndarray:
    """Indices of the attention-mass prefix, sorted by descending attention.

    Regions are ordered by decreasing attention weight (ties by ascending
    original index); the kept prefix is the longest whose cumulative mass
    stays <= tau. A dominant first region that alone exceeds tau still gets
    kept, so the result is never empty.
    """
    ca = np.asarray(ca, dtype=np.float64)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    order = np.argsort(-ca, kind="stable")
    prefix = np.cumsum(ca[order])
    t = int(np.searchsorted(prefix, tau, side="right"))
    if t == 0:
        t = 1
    return order[:t]


def locality_mask(pa, filtered, d0: int, grid_h: int, grid_w: int) -> np.ndarray:
    """The filtered x filtered attention submatrix with far pairs zeroed.

    Pair (i, j) survives when the Chebyshev distance between the regions'
    2-D grid coordinates is <= d0; entries keep filtered order.
    """
    idx = np.asarray(filtered, dtype=np.int64)
    hw = grid_h * grid_w
    if idx.size and (idx.min() < 0 or idx.max() >= hw):
        raise ValueError("filtered indices out of grid range")
    ys = idx // grid_w
    xs = idx % grid_w
    cheb = np.maximum(np.abs(ys[:, None] - ys[None, :]),
                      np.abs(xs[:, None] - xs[None, :]))
    sub = np.asarray(pa, dtype=np.float64)[np.ix_(idx, idx)]
    return np.where(cheb <= d0, sub, 0.0)


def spectral_cluster(sim, k: int, degree_epsilon: float = 1e-8,
                     seed: int = 0) -> np.ndarray:
    """Normalized-Laplacian spectral clustering of a t x t similarity matrix.

    Symmetrizes the input, regularizes degrees by degree_epsilon, forms
    L = I - D^{-1/2} A D^{-1/2}, embeds rows with the min(k, t) smallest
    eigenvectors, row-normalizes (zero rows fall back to the first basis
    direction), and k-means the embedded rows. Returns min(k, t) labels.
    """
    s = np.asarray(sim, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"similarity must be square, got shape {s.shape}")
    if not np.isfinite(s).all():
        raise ValueError("similarity has non-finite entries")
    t = s.shape[0]
    if t < 1 or k < 1:
        raise ValueError("need t >= 1 and k >= 1")
    k_used = min(k, t)
    if k_used == 1:
        return np.zeros(t, dtype=np.int64)

    adj = 0.5 * (s + s.T)
    inv_sqrt_deg = 1.0 / np.sqrt(adj.sum(axis=1) + degree_epsilon)
    lap = np.eye(t) - inv_sqrt_deg[:, None] * adj * inv_sqrt_deg[None, :]

    vectors = sym_eigen_smallest(lap, k_used).vectors
    norms = np.linalg.norm(vectors, axis=1)
    rows = np.zeros_like(vectors)
    good = norms > 1e-12
    rows[good] = vectors[good] / norms[good, None]
    rows[~good, 0] = 1.0
    return kmeans(rows, k_used, seed=seed)


def compute_patterns(features, assignment, image_id: str = "") -> SemanticPatternSet:
    """Average feature rows per cluster label; labels must be 0..k_used-1."""
    f = np.asarray(features, dtype=np.float64)
    labels = np.asarray(assignment, dtype=np.int64)
    if f.shape[0] != labels.shape[0]:
        raise ValueError(f"{f.shape[0]} feature rows but {labels.shape[0]} labels")
    k_used = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=k_used)
    if (counts == 0).any():
        raise ValueError("every cluster label in 0..k_used-1 must be nonempty")
    patterns = np.zeros((k_used, f.shape[1]))
    np.add.at(patterns, labels, f)
    patterns /= counts[:, None]
    return SemanticPatternSet(image_id=image_id, patterns=patterns,
                              member_counts=counts.astype(np.int64))


def extract_image_patterns(record: ImageRecord,
                           cfg: ExtractionConfig) -> SemanticPatternSet:
    """Run the full per-image stage chain on one record."""
    filtered = attention_filter(record.cls_attention, cfg.tau)
    sim = locality_mask(record.patch_attention, filtered, cfg.d0,
                        record.grid_h, record.grid_w)
    labels = spectral_cluster(sim, cfg.k_patterns,
                              degree_epsilon=cfg.degree_epsilon, seed=cfg.seed)
    feats = np.asarray(record.patch_features, dtype=np.float64)[filtered]
    return compute_patterns(feats, labels, image_id=record.image_id)


def extract_bundle_patterns(records: Iterable[ImageRecord], cfg: ExtractionConfig,
                            threads: int = 1,
                            progress: Callable[[int, str], None] | None = None,
                            ) -> Iterator[SemanticPatternSet]:
    """Extract patterns for a record stream, yielding in input order.

    With threads > 1 records are fanned out to a pool with a bounded
    in-flight window, so memory stays independent of stream length; results
    are gathered in input order, which keeps output identical for any thread
    count.
    """
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    done = 0

    def _emit(ps: SemanticPatternSet) -> SemanticPatternSet:
        nonlocal done
        done += 1
        if progress is not None:
            progress(done, ps.image_id)
        return ps

    if threads == 1:
        for record in records:
            yield _emit(extract_image_patterns(record, cfg))
        return

    window = 2 * threads
    with ThreadPoolExecutor(max_workers=threads) as pool:
        pending = deque()
        for record in records:
            pending.append(pool.submit(extract_image_patterns, record, cfg))
            if len(pending) >= window:
                yield _emit(pending.popleft().result())
        while pending:
            yield _emit(pending.popleft().result())


def write_patterns(pattern_sets: Iterable[SemanticPatternSet],
                   destination: PathOrFile) -> int:
    """Serialize pattern sets to the patterns wire format; returns the count."""
    sink, owned = _as_sink(destination)
    try:
        sink.write(_PAT_HEADER.pack(PATTERNS_MAGIC, PATTERNS_VERSION))
        count = 0
        for ps in pattern_sets:
            if ps.k_used < 1:
                raise ValueError(f"pattern set {ps.image_id!r} is empty")
            if not np.isfinite(ps.patterns).all():
                raise ValueError(f"pattern set {ps.image_id!r} has non-finite entries")
            id_bytes = ps.image_id.encode("utf-8")
            sink.write(struct.pack("<I", len(id_bytes)))
            sink.write(id_bytes)
            sink.write(_PAT_DIMS.pack(ps.k_used, ps.feat_dim))
            sink.write(np.ascontiguousarray(ps.patterns, dtype="<f4").tobytes())
            sink.write(np.ascontiguousarray(ps.member_counts, dtype="<u4").tobytes())
            count += 1
        return count
    finally:
        if owned:
            sink.close()


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    data = source.read(n)
    if len(data) != n:
        raise BundleFormatError(f"truncated patterns file: expected {n} bytes "
                                f"for {what}, got {len(data)}")
    return data


def read_patterns(source: PathOrFile) -> Iterator[SemanticPatternSet]:
    """Lazily yield pattern sets until end of file."""
    src, owned = _as_source(source)
    try:
        magic, version = _PAT_HEADER.unpack(_read_exact(src, _PAT_HEADER.size, "header"))
        if magic != PATTERNS_MAGIC:
            raise BundleFormatError(f"bad magic {magic!r}, expected {PATTERNS_MAGIC!r}")
        if version != PATTERNS_VERSION:
            raise BundleFormatError(f"unsupported patterns version {version}")
        i = 0
        while True:
            lead = src.read(4)
            if len(lead) == 0:
                return
            if len(lead) != 4:
                raise BundleFormatError(f"truncated patterns file at record {i}")
            (id_len,) = struct.unpack("<I", lead)
            try:
                image_id = _read_exact(src, id_len, f"record {i} id").decode("utf-8")
            except UnicodeDecodeError as exc:
                raise BundleFormatError(f"record {i}: id is not valid UTF-8") from exc
            k_used, feat_dim = _PAT_DIMS.unpack(
                _read_exact(src, _PAT_DIMS.size, f"record {i} dims"))
            if k_used < 1 or feat_dim < 1:
                raise BundleFormatError(f"record {i}: non-positive dims")
            raw = _read_exact(src, 4 * k_used * feat_dim, f"record {i} patterns")
            patterns = np.frombuffer(raw, dtype="<f4").reshape(k_used, feat_dim)
            raw = _read_exact(src, 4 * k_used, f"record {i} member counts")
            counts = np.frombuffer(raw, dtype="<u4").astype(np.int64)
            yield SemanticPatternSet(image_id=image_id,
                                     patterns=patterns.astype(np.float64),
                                     member_counts=counts)
            i += 1
    finally:
        if owned:
            src.close()
