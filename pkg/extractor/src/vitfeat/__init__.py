"""Feature-bundle extraction from image directories with a patch-16 ViT."""

from .extract import ExtractorConfig, ExtractReport, extract, list_images, selfcheck
from .model import VisionTransformer, build_model

__version__ = "0.1.0"

__all__ = [
    "ExtractorConfig", "ExtractReport", "extract", "list_images", "selfcheck",
    "VisionTransformer", "build_model",
]
