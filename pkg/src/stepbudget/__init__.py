"""Perceptual step-budget scheduling for text-to-image diffusion inference.

The library predicts perceptual-quality-vs-denoising-step curves from
prompt embeddings, detects the plateau step past which extra denoising
buys little visible quality, and accounts for quality gained per unit of
compute. See the CLI (``stepbudget --help``) for the end-to-end pipeline.
"""

__version__ = "0.1.0"

from .types import (
    DEFAULT_ORIENTATIONS,
    CostModel,
    EmbeddingVector,
    Metric,
    MetricSample,
    MetricSeries,
    Orientation,
    Prompt,
    TimestepGrid,
)
from .errors import (
    FormatError,
    IncompleteDatasetError,
    TrainingDivergedError,
    ValidationError,
)

__all__ = [
    "DEFAULT_ORIENTATIONS",
    "CostModel",
    "EmbeddingVector",
    "Metric",
    "MetricSample",
    "MetricSeries",
    "Orientation",
    "Prompt",
    "TimestepGrid",
    "FormatError",
    "IncompleteDatasetError",
    "TrainingDivergedError",
    "ValidationError",
    "__version__",
]
