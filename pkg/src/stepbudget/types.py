"""Shared domain types: prompts, embeddings, timestep grids, metric records.

All types are immutable after construction and safe to share across
threads. Validation happens in ``__post_init__``; anything that passes
construction satisfies the documented invariants.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


class Metric(enum.Enum):
    """The three perceptual metric families tracked per generated image."""

    LSNR = "LSNR"
    DSIM = "DSIM"
    ICLIP = "ICLIP"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, name: str) -> "Metric":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValidationError(f"unknown metric name: {name!r}") from None


class Orientation(enum.Enum):
    """Whether larger raw values of a metric mean better quality."""

    UP_GOOD = "up"
    DOWN_GOOD = "down"


# Default reading of each metric's polarity. The sharpness ratio and the
# caption-similarity score rise with quality; the perceptual distance falls.
# Overridable wherever an ``orientations`` mapping is accepted, since the
# polarity of the sharpness score is a configuration matter, not a constant.
DEFAULT_ORIENTATIONS: dict[Metric, Orientation] = {
    Metric.LSNR: Orientation.UP_GOOD,
    Metric.DSIM: Orientation.DOWN_GOOD,
    Metric.ICLIP: Orientation.UP_GOOD,
}


@dataclass(frozen=True)
class Prompt:
    """A text prompt with a corpus-unique integer id."""

    id: int
    text: str

    def __post_init__(self):
        if not isinstance(self.id, int) or self.id < 0 or self.id >= 2**64:
            raise ValidationError(f"prompt id must be u64, got {self.id!r}")
        if not self.text.strip():
            raise ValidationError(f"prompt {self.id}: text is empty")


@dataclass(frozen=True)
class EmbeddingVector:
    """A fixed-width real vector (prompt or positional embedding)."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValidationError("embedding must be a non-empty 1-D vector")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("embedding contains non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class TimestepGrid:
    """Strictly increasing denoising-step samples; the last entry is the
    reference step used as full-quality target."""

    steps: tuple[int, ...]

    def __post_init__(self):
        steps = tuple(int(s) for s in self.steps)
        if not steps:
            raise ValidationError("timestep grid is empty")
        if steps[0] < 1:
            raise ValidationError("timestep grid entries must be >= 1")
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValidationError("timestep grid must be strictly increasing")
        object.__setattr__(self, "steps", steps)

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def __contains__(self, step: int) -> bool:
        return step in self.steps

    @property
    def last(self) -> int:
        """The reference step (largest sampled step)."""
        return self.steps[-1]


@dataclass(frozen=True)
class MetricSample:
    """One raw measurement: a metric value for (prompt, seed, timestep)."""

    prompt_id: int
    seed: int
    timestep: int
    metric: Metric
    value: float

    def __post_init__(self):
        if self.prompt_id < 0 or self.prompt_id >= 2**64:
            raise ValidationError(f"prompt_id must be u64, got {self.prompt_id}")
        if self.seed < 0 or self.seed >= 2**32:
            raise ValidationError(f"seed must be u32, got {self.seed}")
        if self.timestep < 1:
            raise ValidationError(f"timestep must be >= 1, got {self.timestep}")
        if not isinstance(self.metric, Metric):
            raise ValidationError(f"metric must be a Metric, got {self.metric!r}")
        if not (math.isfinite(self.value) and 0.0 <= self.value <= 1.0):
            raise ValidationError(
                f"metric value must lie in [0, 1], got {self.value!r}"
            )


def _as_readonly(arr, dtype) -> np.ndarray:
    out = np.asarray(arr, dtype=dtype)
    if out.base is not None or out is arr:
        out = out.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class MetricSeries:
    """A per-prompt metric curve over timesteps.

    ``dense`` is true when ``steps`` covers every integer from 1 to the
    final step consecutively.
    """

    prompt_id: int
    metric: Metric
    steps: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    dense: bool = False

    def __post_init__(self):
        steps = _as_readonly(self.steps, np.int64)
        values = _as_readonly(self.values, np.float64)
        if steps.ndim != 1 or values.ndim != 1:
            raise ValidationError("series steps/values must be 1-D")
        if steps.shape != values.shape:
            raise ValidationError("series steps/values length mismatch")
        if steps.size == 0:
            raise ValidationError("series is empty")
        if steps[0] < 1 or np.any(np.diff(steps) <= 0):
            raise ValidationError("series steps must be strictly increasing, >= 1")
        if not np.all(np.isfinite(values)):
            raise ValidationError("series values contain non-finite entries")
        if np.any(values < 0.0) or np.any(values > 1.0):
            raise ValidationError("series values must lie in [0, 1]")
        is_dense = steps[0] == 1 and steps[-1] == steps.size
        if self.dense and not is_dense:
            raise ValidationError("dense flag set but steps are not 1..t_N")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dense", bool(is_dense))

    def __len__(self) -> int:
        return int(self.steps.size)

    @property
    def last_step(self) -> int:
        return int(self.steps[-1])

    def value_at(self, step: int) -> float:
        """Exact value at a sampled step (dense series: O(1))."""
        if self.dense:
            if not 1 <= step <= self.last_step:
                raise ValidationError(f"step {step} outside dense range 1..{self.last_step}")
            return float(self.values[step - 1])
        idx = np.searchsorted(self.steps, step)
        if idx >= len(self.steps) or self.steps[idx] != step:
            raise ValidationError(f"step {step} not sampled in series")
        return float(self.values[idx])


@dataclass(frozen=True)
class CostModel:
    """Affine compute-cost model: TFLOPs consumed per generation."""

    tflops_per_step: float
    fixed_overhead_tflops: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.tflops_per_step) and self.tflops_per_step > 0):
            raise ValidationError("tflops_per_step must be positive")
        if not (math.isfinite(self.fixed_overhead_tflops) and self.fixed_overhead_tflops >= 0):
            raise ValidationError("fixed_overhead_tflops must be >= 0")
