"""attnexporter: attention-bundle capture from diffusion pipelines."""

from .capture import (
    CaptureConfig,
    ModelLoadError,
    ResolutionMismatch,
    capture,
    capture_from_components,
)

__version__ = "0.1.0"

__all__ = [
    "CaptureConfig",
    "ModelLoadError",
    "ResolutionMismatch",
    "capture",
    "capture_from_components",
]
