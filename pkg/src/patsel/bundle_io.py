"""Binary feature-bundle serialization, streaming deserialization and validation.

A bundle is the file handed from the feature extractor to the selection engine.
Wire format, little-endian throughout:

    magic  4 bytes  b"FSEL"
    version u32     = 1
    record_count u64
    per record:
        id_len u32, id bytes (UTF-8),
        grid_h u16, grid_w u16, feat_dim u16, reserved u16 = 0,
        cls_feature     f32[d]
        cls_attention   f32[HW]
        patch_attention f32[HW*HW]  row-major
        patch_features  f32[HW*d]   row-major

No compression in v1; the version field reserves room. Records whose
HW*d exceeds SIZE_CAP_ENTRIES are rejected on both the read and write path to
bound single-record memory (configurable per call).
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Iterator, Union

import numpy as np

from .rng import make_rng

MAGIC = b"FSEL"
VERSION = 1

# Single-record size bound: HW * d entries. 2**26 f32 entries = 256 MiB.
SIZE_CAP_ENTRIES = 2**26

_HEADER = struct.Struct("<4sIQ")
_REC_DIMS = struct.Struct("<HHHH")

PathOrFile = Union[str, os.PathLike, BinaryIO]


class BundleFormatError(Exception):
    """Raised for malformed bundles: bad magic, bad version, truncation,
    dimension overflow, or undecodable ids."""


@dataclass(eq=False)
class ImageRecord:
    """One image's dense patch features, global feature and attention maps.

    grid_h x grid_w is the feature-map shape (HW regions), feat_dim the feature
    width d. cls_attention has one nonnegative weight per region and sums to 1;
    each patch_attention row does the same. All arrays are float32.
    """

    image_id: str
    grid_h: int
    grid_w: int
    feat_dim: int
    cls_feature: np.ndarray      # (d,)
    cls_attention: np.ndarray    # (HW,)
    patch_attention: np.ndarray  # (HW, HW)
    patch_features: np.ndarray   # (HW, d)

    @property
    def num_regions(self) -> int:
        return self.grid_h * self.grid_w

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageRecord):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.grid_h == other.grid_h
            and self.grid_w == other.grid_w
            and self.feat_dim == other.feat_dim
            and np.array_equal(self.cls_feature, other.cls_feature)
            and np.array_equal(self.cls_attention, other.cls_attention)
            and np.array_equal(self.patch_attention, other.patch_attention)
            and np.array_equal(self.patch_features, other.patch_features)
        )


@dataclass(frozen=True)
class Violation:
    """One invariant breach found by validate_record."""

    field: str
    index: int | None
    observed: object
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, field_name: str, index: int | None, observed, message: str) -> None:
        self.violations.append(Violation(field_name, index, observed, message))


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for deterministic synthetic bundle generation."""

    num_images: int
    grid_h: int
    grid_w: int
    feat_dim: int
    num_latent_categories: int
    noise_scale: float
    seed: int

    def __post_init__(self):
        if self.num_images < 0:
            raise ValueError(f"num_images must be >= 0, got {self.num_images}")
        for name in ("grid_h", "grid_w", "feat_dim", "num_latent_categories"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.noise_scale < 0:
            raise ValueError(f"noise_scale must be >= 0, got {self.noise_scale}")


def validate_record(record: ImageRecord, tolerance: float = 1e-4,
                    size_cap: int = SIZE_CAP_ENTRIES) -> ValidationReport:
    """Check every record invariant; violations are data, not errors.

    Reports dimension inconsistencies, the size cap, non-finite entries
    (by flat index), negative attention entries, and attention sums that
    stray from 1 by more than `tolerance`.
    """
    rep = ValidationReport()
    for name in ("grid_h", "grid_w", "feat_dim"):
        v = getattr(record, name)
        if v < 1:
            rep.add(name, None, v, f"{name} must be positive")
    if rep.violations:
        return rep

    hw = record.num_regions
    d = record.feat_dim
    if hw * d > size_cap:
        rep.add("dims", None, hw * d,
                f"record size HW*d = {hw * d} exceeds cap {size_cap}")

    expected = {
        "cls_feature": (d,),
        "cls_attention": (hw,),
        "patch_attention": (hw, hw),
        "patch_features": (hw, d),
    }
    shape_ok = True
    for name, shape in expected.items():
        arr = getattr(record, name)
        if tuple(arr.shape) != shape:
            rep.add(name, None, tuple(arr.shape), f"expected shape {shape}")
            shape_ok = False
    if not shape_ok:
        return rep

    for name in expected:
        arr = np.asarray(getattr(record, name), dtype=np.float64)
        bad = np.flatnonzero(~np.isfinite(arr.ravel()))
        for idx in bad:
            rep.add(name, int(idx), float(arr.ravel()[idx]), "non-finite entry")

    ca = np.asarray(record.cls_attention, dtype=np.float64)
    for idx in np.flatnonzero(ca < 0):
        rep.add("cls_attention", int(idx), float(ca[idx]), "negative attention entry")
    s = float(ca.sum())
    if not abs(s - 1.0) <= tolerance:
        rep.add("cls_attention", None, s, f"sum {s!r} not within {tolerance} of 1")

    pa = np.asarray(record.patch_attention, dtype=np.float64)
    neg_r, neg_c = np.nonzero(pa < 0)
    for r, c in zip(neg_r, neg_c):
        rep.add("patch_attention", int(r * hw + c), float(pa[r, c]),
                "negative attention entry")
    row_sums = pa.sum(axis=1)
    for r in np.flatnonzero(~(np.abs(row_sums - 1.0) <= tolerance)):
        rep.add("patch_attention", int(r), float(row_sums[r]),
                f"row sum {row_sums[r]!r} not within {tolerance} of 1")
    return rep


def _as_sink(destination: PathOrFile):
    if hasattr(destination, "write"):
        return destination, False
    return open(destination, "wb"), True


def _as_source(source: PathOrFile):
    if hasattr(source, "read"):
        return source, False
    return open(source, "rb"), True


def _record_payload(record: ImageRecord) -> bytes:
    id_bytes = record.image_id.encode("utf-8")
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(id_bytes)))
    buf.write(id_bytes)
    buf.write(_REC_DIMS.pack(record.grid_h, record.grid_w, record.feat_dim, 0))
    for name in ("cls_feature", "cls_attention", "patch_attention", "patch_features"):
        arr = np.ascontiguousarray(getattr(record, name), dtype="<f4")
        buf.write(arr.tobytes())
    return buf.getvalue()


def write_bundle(records: Iterable[ImageRecord], destination: PathOrFile,
                 tolerance: float = 1e-4, size_cap: int = SIZE_CAP_ENTRIES) -> int:
    """Serialize records to the bundle wire format; returns the record count.

    Every record is validated before it is written and image_ids must be
    unique. When the record count is not known up front (no __len__), the
    header count is back-patched, which requires a seekable sink.
    """
    sink, owned = _as_sink(destination)
    try:
        known_count = len(records) if hasattr(records, "__len__") else None
        header_pos = sink.tell() if known_count is None else None
        sink.write(_HEADER.pack(MAGIC, VERSION, known_count or 0))

        seen: set[str] = set()
        count = 0
        for record in records:
            if record.image_id in seen:
                raise ValueError(f"duplicate image_id {record.image_id!r}")
            seen.add(record.image_id)
            report = validate_record(record, tolerance=tolerance, size_cap=size_cap)
            if not report.ok:
                first = report.violations[0]
                raise ValueError(
                    f"invalid record {record.image_id!r}: {first.message} "
                    f"(field={first.field}, index={first.index}, "
                    f"observed={first.observed!r}; {len(report.violations)} violation(s))"
                )
            sink.write(_record_payload(record))
            count += 1

        if known_count is None:
            end = sink.tell()
            sink.seek(header_pos)
            sink.write(_HEADER.pack(MAGIC, VERSION, count))
            sink.seek(end)
        elif count != known_count:
            raise ValueError(f"records yielded {count} items but len() said {known_count}")
        return count
    finally:
        if owned:
            sink.close()


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    data = source.read(n)
    if len(data) != n:
        raise BundleFormatError(f"truncated bundle: expected {n} bytes for {what}, "
                                f"got {len(data)}")
    return data


def _read_f32(source: BinaryIO, count: int, shape: tuple, what: str) -> np.ndarray:
    # read directly into the destination buffer: one allocation per array,
    # which keeps streaming memory at O(one record)
    arr = np.empty(count, dtype="<f4")
    mv = memoryview(arr).cast("B")
    readinto = getattr(source, "readinto", None)
    total = 0
    if readinto is not None:
        while total < len(mv):
            got = readinto(mv[total:])
            if not got:
                break
            total += got
    else:
        while total < len(mv):
            chunk = source.read(len(mv) - total)
            if not chunk:
                break
            mv[total:total + len(chunk)] = chunk
            total += len(chunk)
    if total != len(mv):
        raise BundleFormatError(f"truncated bundle: expected {len(mv)} bytes "
                                f"for {what}, got {total}")
    return arr.reshape(shape)


def read_bundle_stream(source: PathOrFile,
                       size_cap: int = SIZE_CAP_ENTRIES) -> Iterator[ImageRecord]:
    """Lazily yield records from a bundle in file order.

    Memory use is bounded by one record regardless of bundle size. Structural
    problems (bad magic, unsupported version, truncation, dimension overflow)
    raise BundleFormatError; records already yielded remain valid. Numeric
    invariants are deliberately not re-checked here, see validate_record.
    """
    src, owned = _as_source(source)
    try:
        head = _read_exact(src, _HEADER.size, "header")
        magic, version, record_count = _HEADER.unpack(head)
        if magic != MAGIC:
            raise BundleFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise BundleFormatError(f"unsupported bundle version {version}")

        for i in range(record_count):
            (id_len,) = struct.unpack("<I", _read_exact(src, 4, f"record {i} id length"))
            try:
                image_id = _read_exact(src, id_len, f"record {i} id").decode("utf-8")
            except UnicodeDecodeError as exc:
                raise BundleFormatError(f"record {i}: id is not valid UTF-8") from exc
            grid_h, grid_w, feat_dim, reserved = _REC_DIMS.unpack(
                _read_exact(src, _REC_DIMS.size, f"record {i} dims"))
            if reserved != 0:
                raise BundleFormatError(f"record {i}: reserved field = {reserved}, expected 0")
            if grid_h < 1 or grid_w < 1 or feat_dim < 1:
                raise BundleFormatError(
                    f"record {i}: non-positive dims ({grid_h}, {grid_w}, {feat_dim})")
            hw = grid_h * grid_w
            if hw * feat_dim > size_cap:
                raise BundleFormatError(
                    f"record {i}: HW*d = {hw * feat_dim} exceeds size cap {size_cap}")

            yield ImageRecord(
                image_id=image_id,
                grid_h=grid_h,
                grid_w=grid_w,
                feat_dim=feat_dim,
                cls_feature=_read_f32(src, feat_dim, (feat_dim,), f"record {i} cls_feature"),
                cls_attention=_read_f32(src, hw, (hw,), f"record {i} cls_attention"),
                patch_attention=_read_f32(src, hw * hw, (hw, hw),
                                          f"record {i} patch_attention"),
                patch_features=_read_f32(src, hw * feat_dim, (hw, feat_dim),
                                         f"record {i} patch_features"),
            )
    finally:
        if owned:
            src.close()


def read_bundle_header(source: PathOrFile) -> tuple[int, int]:
    """Return (version, record_count) after checking the magic bytes."""
    src, owned = _as_source(source)
    try:
        magic, version, record_count = _HEADER.unpack(
            _read_exact(src, _HEADER.size, "header"))
        if magic != MAGIC:
            raise BundleFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise BundleFormatError(f"unsupported bundle version {version}")
        return version, record_count
    finally:
        if owned:
            src.close()


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def generate_synthetic_bundle(spec: SynthSpec,
                              size_cap: int = SIZE_CAP_ENTRIES) -> Iterator[ImageRecord]:
    """Deterministically generate records around planted unit-norm centroids.

    Patch features are a per-patch random choice of num_latent_categories
    shared centroids plus Gaussian noise of scale noise_scale; both attention
    maps are softmax of random logits so sums are 1 up to f32 rounding. The
    same spec always yields byte-identical records.
    """
    hw = spec.grid_h * spec.grid_w
    if hw * spec.feat_dim > size_cap:
        raise ValueError(f"HW*d = {hw * spec.feat_dim} exceeds size cap {size_cap}")
    rng = make_rng(spec.seed)
    centroids = rng.normal(size=(spec.num_latent_categories, spec.feat_dim))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)

    for i in range(spec.num_images):
        assign = rng.integers(0, spec.num_latent_categories, size=hw)
        feats = centroids[assign]
        if spec.noise_scale > 0:
            feats = feats + spec.noise_scale * rng.normal(size=(hw, spec.feat_dim))
        ca = _softmax_rows(rng.normal(size=hw))
        pa = _softmax_rows(rng.normal(size=(hw, hw)))
        cls = feats.mean(axis=0)
        cls /= np.linalg.norm(cls)
        yield ImageRecord(
            image_id=f"synth-{i:06d}",
            grid_h=spec.grid_h,
            grid_w=spec.grid_w,
            feat_dim=spec.feat_dim,
            cls_feature=cls.astype(np.float32),
            cls_attention=ca.astype(np.float32),
            patch_attention=pa.astype(np.float32),
            patch_features=feats.astype(np.float32),
        )
