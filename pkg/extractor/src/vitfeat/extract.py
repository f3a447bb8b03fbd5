"""Image-directory to feature-bundle extraction.

Per image, from the final transformer block: attention averaged over heads;
the class-token row restricted to patch columns and renormalized to sum 1;
the patch-patch attention block with rows renormalized; patch tokens taken
after the final normalization layer and L2-normalized; the class token
likewise. Records are written in lexicographic filename order.

The bundle wire format is the engine's external contract and is produced
here independently (little-endian): magic "FSEL", u32 version 1, u64 record
count, then per record u32 id length, UTF-8 id, u16 grid_h/grid_w/feat_dim,
u16 reserved 0, and f32 arrays cls_feature[d], cls_attention[HW],
patch_attention[HW*HW], patch_features[HW*d].
"""

from __future__ import annotations

import struct
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .model import (
    DEFAULT_DEPTH,
    DEFAULT_EMBED_DIM,
    DEFAULT_NUM_HEADS,
    PATCH_SIZE,
    build_model,
)

MAGIC = b"FSEL"
VERSION = 1

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".webp"}
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass
class ExtractorConfig:
    image_dir: str
    out_path: str
    weights: str | None = None
    resize: tuple[int, int] = (224, 224)  # (height, width)
    batch_size: int = 8
    device: str = "cpu"
    embed_dim: int = DEFAULT_EMBED_DIM
    depth: int = DEFAULT_DEPTH
    num_heads: int = DEFAULT_NUM_HEADS
    seed: int = 0  # init seed for the no-checkpoint fallback

    def __post_init__(self):
        h, w = self.resize
        if h % PATCH_SIZE or w % PATCH_SIZE:
            raise ValueError(f"resize {h}x{w} must be divisible by {PATCH_SIZE}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def grid(self) -> tuple[int, int]:
        return self.resize[0] // PATCH_SIZE, self.resize[1] // PATCH_SIZE


@dataclass
class ExtractReport:
    written: int = 0
    skipped: list[str] = field(default_factory=list)
    max_ca_dev: float = 0.0   # worst |sum(ca) - 1| over written records
    max_pa_dev: float = 0.0   # worst |row sum - 1| over written records


def list_images(image_dir: str) -> list[Path]:
    root = Path(image_dir)
    if not root.is_dir():
        raise ValueError(f"{image_dir}: not a directory")
    files = [p for p in root.iterdir()
             if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES]
    return sorted(files, key=lambda p: p.name)


def load_image(path: Path, resize: tuple[int, int]) -> np.ndarray | None:
    """(3, H, W) normalized float32, or None when the file cannot be decoded."""
    h, w = resize
    try:
        with Image.open(path) as img:
            img = img.convert("RGB").resize((w, h), Image.BICUBIC)
            arr = np.asarray(img, dtype=np.float32) / 255.0
    except Exception:
        return None
    arr = (arr - IMAGENET_MEAN) / IMAGENET_STD
    return arr.transpose(2, 0, 1)


def _write_record(sink, image_id: str, grid: tuple[int, int],
                  cls_feature: np.ndarray, cls_attention: np.ndarray,
                  patch_attention: np.ndarray, patch_features: np.ndarray) -> None:
    id_bytes = image_id.encode("utf-8")
    grid_h, grid_w = grid
    sink.write(struct.pack("<I", len(id_bytes)))
    sink.write(id_bytes)
    sink.write(struct.pack("<HHHH", grid_h, grid_w, cls_feature.shape[0], 0))
    for arr in (cls_feature, cls_attention, patch_attention, patch_features):
        sink.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def extract(config: ExtractorConfig, files: list[Path] | None = None,
            log=None) -> ExtractReport:
    """Run the model over the directory and write the bundle.

    Undecodable images are skipped with a warning and recorded in a plain
    text sidecar log at <out_path>.skipped.txt (written only when needed).
    """
    if log is None:
        log = sys.stderr
    if files is None:
        files = list_images(config.image_dir)
    model = build_model(config.embed_dim, config.depth, config.num_heads,
                        config.seed, config.weights).to(config.device)
    grid = config.grid
    report = ExtractReport()

    out_path = Path(config.out_path)
    with open(out_path, "wb") as sink:
        sink.write(struct.pack("<4sIQ", MAGIC, VERSION, 0))

        batch_paths: list[Path] = []
        batch_arrays: list[np.ndarray] = []

        def flush():
            if not batch_paths:
                return
            x = torch.from_numpy(np.stack(batch_arrays)).to(config.device)
            with torch.no_grad():
                tokens, attn = model.forward_with_attention(x)
            tokens = tokens.cpu().numpy().astype(np.float64)
            attn = attn.mean(dim=1).cpu().numpy().astype(np.float64)  # head average
            for i, path in enumerate(batch_paths):
                ca = attn[i, 0, 1:]
                ca = ca / ca.sum()
                pa = attn[i, 1:, 1:]
                pa = pa / pa.sum(axis=1, keepdims=True)
                cls_feature = _unit_rows(tokens[i, 0])
                patch_features = _unit_rows(tokens[i, 1:])
                ca32 = ca.astype(np.float32)
                pa32 = pa.astype(np.float32)
                report.max_ca_dev = max(report.max_ca_dev,
                                        abs(float(ca32.astype(np.float64).sum()) - 1.0))
                report.max_pa_dev = max(report.max_pa_dev,
                                        float(np.abs(pa32.astype(np.float64).sum(axis=1) - 1.0).max()))
                _write_record(sink, path.name, grid,
                              cls_feature.astype(np.float32), ca32, pa32,
                              patch_features.astype(np.float32))
                report.written += 1
            batch_paths.clear()
            batch_arrays.clear()

        for path in files:
            arr = load_image(path, config.resize)
            if arr is None:
                print(f"warning: skipping undecodable image {path.name}", file=log)
                report.skipped.append(path.name)
                continue
            batch_paths.append(path)
            batch_arrays.append(arr)
            if len(batch_paths) == config.batch_size:
                flush()
        flush()

        sink.seek(0)
        sink.write(struct.pack("<4sIQ", MAGIC, VERSION, report.written))

    if report.skipped:
        skip_log = out_path.with_name(out_path.name + ".skipped.txt")
        skip_log.write_text("".join(f"{name}\n" for name in report.skipped),
                            encoding="utf-8")
    return report


def selfcheck(config: ExtractorConfig, sample: int = 10, log=None) -> dict:
    """Extract a small sample twice and compare the bundles byte for byte.

    Returns a report with the byte-equality verdict and attention row-sum
    diagnostics; determinism failures are reported, not raised.
    """
    import tempfile

    files = list_images(config.image_dir)[:sample]
    runs = []
    reports = []
    with tempfile.TemporaryDirectory(prefix="vitfeat-selfcheck-") as tmp:
        for tag in ("a", "b"):
            path = Path(tmp) / f"run-{tag}.fsel"
            cfg = ExtractorConfig(
                image_dir=config.image_dir, out_path=str(path),
                weights=config.weights, resize=config.resize,
                batch_size=config.batch_size, device=config.device,
                embed_dim=config.embed_dim, depth=config.depth,
                num_heads=config.num_heads, seed=config.seed)
            reports.append(extract(cfg, files=files, log=log))
            runs.append(path.read_bytes())
    return {
        "images": reports[0].written,
        "skipped": reports[0].skipped,
        "byte_identical": runs[0] == runs[1],
        "max_ca_dev": max(r.max_ca_dev for r in reports),
        "max_pa_dev": max(r.max_pa_dev for r in reports),
    }
