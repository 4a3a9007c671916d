from .generator import SynthConfig, generate_synthetic_corpus
from .manifest import ManifestError, load_manifest, write_manifest
from .types import (
    Dataset,
    FINDING_CATEGORIES,
    GroundingAnnotation,
    ImageRecord,
    PairedSample,
    ReportDocument,
    ValidationVerdict,
)
from .validation import MAX_PHRASE_TOKENS, validate_annotation

__all__ = [
    "Dataset",
    "FINDING_CATEGORIES",
    "GroundingAnnotation",
    "ImageRecord",
    "ManifestError",
    "MAX_PHRASE_TOKENS",
    "PairedSample",
    "ReportDocument",
    "SynthConfig",
    "ValidationVerdict",
    "generate_synthetic_corpus",
    "load_manifest",
    "validate_annotation",
    "write_manifest",
]
