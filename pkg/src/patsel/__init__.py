"""Single-pass, training-free selection of diverse annotation subsets.

The package consumes binary feature bundles (per-image transformer features
and attention maps), extracts per-image semantic patterns, and samples a
diverse subset of images at the pattern level. See README.md for the pipeline
walkthrough and the `patsel` command-line interface.
"""

from .bundle_io import (
    BundleFormatError,
    ImageRecord,
    SynthSpec,
    ValidationReport,
    Violation,
    generate_synthetic_bundle,
    read_bundle_header,
    read_bundle_stream,
    validate_record,
    write_bundle,
)
from .numkernels import (
    EigenPairs,
    cosine_distance,
    euclidean_distance,
    kmeans,
    sym_eigen_smallest,
)
from .pattern_extraction import (
    ExtractionConfig,
    SemanticPatternSet,
    attention_filter,
    compute_patterns,
    extract_bundle_patterns,
    extract_image_patterns,
    locality_mask,
    read_patterns,
    spectral_cluster,
    write_patterns,
)
from .rng import make_rng
from .selection import (
    CandidatePool,
    SelectionResult,
    SelectionState,
    SelectionStep,
    new_selection_state,
    select_fds,
    select_global_fds,
    select_kmeans_global,
    select_prob,
    select_random,
    update_min_dist,
    write_selection_ids,
    write_selection_jsonl,
)

__version__ = "0.1.0"

__all__ = [
    "BundleFormatError", "ImageRecord", "SynthSpec", "ValidationReport",
    "Violation", "generate_synthetic_bundle", "read_bundle_header",
    "read_bundle_stream", "validate_record", "write_bundle",
    "EigenPairs", "cosine_distance", "euclidean_distance", "kmeans",
    "sym_eigen_smallest",
    "ExtractionConfig", "SemanticPatternSet", "attention_filter",
    "compute_patterns", "extract_bundle_patterns", "extract_image_patterns",
    "locality_mask", "read_patterns", "spectral_cluster", "write_patterns",
    "make_rng",
    "CandidatePool", "SelectionResult", "SelectionState", "SelectionStep",
    "new_selection_state", "select_fds", "select_global_fds",
    "select_kmeans_global", "select_prob", "select_random", "update_min_dist",
    "write_selection_ids", "write_selection_jsonl",
]
