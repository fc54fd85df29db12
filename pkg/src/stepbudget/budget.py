"""Plateau detection: turn metric curves into a suggested step count.

Each curve is first reoriented so larger means better, then thresholded
at median + weight * std; the suggested step for a metric is the
earliest step at or above that threshold, and the combined suggestion is
the maximum over metrics (the most demanding one wins).

The threshold statistics are taken over the sampled (log-spaced) grid
when one is supplied. On a dense saturating curve the median already
sits deep in the saturated tail, pushing the threshold above the curve
maximum and degenerating every suggestion to the final step; the sparse
grid spends half its points below ~20 steps, which is what makes the
rule discriminative.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .types import DEFAULT_ORIENTATIONS, Metric, MetricSeries, Orientation, TimestepGrid

DEFAULT_WEIGHTS: dict[Metric, float] = {
    Metric.LSNR: 0.3,
    Metric.DSIM: 0.2,
    Metric.ICLIP: 0.5,
}


@dataclass(frozen=True)
class PlateauConfig:
    """Per-metric threshold weights and the std flavor used."""

    weights: dict[Metric, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    use_population_std: bool = True
    orientations: dict[Metric, Orientation] = field(
        default_factory=lambda: dict(DEFAULT_ORIENTATIONS)
    )

    def __post_init__(self):
        for metric, w in self.weights.items():
            if w < 0:
                raise ValidationError(f"weight for {metric.value} must be >= 0, got {w}")


@dataclass(frozen=True)
class MetricSuggestion:
    step: int
    threshold: float


@dataclass(frozen=True)
class BudgetSuggestion:
    """Per-metric plateau steps and their combined maximum."""

    prompt_id: int
    per_metric: dict[Metric, MetricSuggestion]
    t_star: int

    def to_dict(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "t_star": self.t_star,
            "per_metric": {
                m.value: {"t": s.step, "threshold": s.threshold}
                for m, s in sorted(self.per_metric.items(), key=lambda kv: kv[0].value)
            },
        }


def canonicalize(
    series: MetricSeries,
    orientations: dict[Metric, Orientation] | None = None,
) -> np.ndarray:
    """Values reoriented up-good: down-good metrics map v -> 1 - v."""
    orientations = orientations or DEFAULT_ORIENTATIONS
    orientation = orientations.get(series.metric, Orientation.UP_GOOD)
    if orientation is Orientation.DOWN_GOOD:
        return 1.0 - series.values
    return series.values.copy()


def plateau_point(
    steps: np.ndarray,
    canonical: np.ndarray,
    weight: float,
    use_population_std: bool = True,
) -> tuple[int, float]:
    """Earliest step whose value reaches median + weight * std.

    Falls back to the final step when nothing qualifies, spending more
    compute rather than under-delivering quality. Ties at the threshold
    qualify (>=).
    """
    steps = np.asarray(steps, dtype=np.int64)
    canonical = np.asarray(canonical, dtype=np.float64)
    if steps.size == 0 or steps.shape != canonical.shape:
        raise ValidationError("steps/values must be non-empty and equal length")
    if np.all(canonical == canonical[0]):
        # the mean of bitwise-identical values can round off by an ulp,
        # which would lift the threshold above the constant and force the
        # fallback; the spread of a constant series is exactly zero
        spread = 0.0
    else:
        spread = float(np.std(canonical, ddof=0 if use_population_std else 1))
    threshold = float(np.median(canonical)) + weight * spread
    hits = np.nonzero(canonical >= threshold)[0]
    step = int(steps[hits[0]]) if hits.size else int(steps[-1])
    return step, threshold


def _restrict_to_grid(steps: np.ndarray, values: np.ndarray,
                      grid: TimestepGrid) -> tuple[np.ndarray, np.ndarray]:
    grid_steps = np.asarray(grid.steps, dtype=np.int64)
    idx = np.searchsorted(steps, grid_steps)
    if np.any(idx >= steps.size) or np.any(steps[idx] != grid_steps):
        raise ValidationError("series does not cover every grid step")
    return grid_steps, values[idx]


def suggest(
    series_by_metric: dict[Metric, MetricSeries],
    cfg: PlateauConfig = PlateauConfig(),
    grid: TimestepGrid | None = None,
) -> BudgetSuggestion:
    """Combined suggestion over all three metrics (max of the plateaus).

    With a grid, the plateau statistics are computed on the series
    restricted to the sampled steps (see module docstring); without one,
    the series' own steps are used as given.
    """
    missing = [m.value for m in Metric if m not in series_by_metric]
    if missing:
        raise ValidationError(f"missing series for metrics: {missing}")
    prompt_ids = {s.prompt_id for s in series_by_metric.values()}
    if len(prompt_ids) != 1:
        raise ValidationError(f"series mix prompts: {sorted(prompt_ids)}")

    per_metric = {}
    for metric in Metric:
        series = series_by_metric[metric]
        canonical = canonicalize(series, cfg.orientations)
        steps = series.steps
        if grid is not None:
            steps, canonical = _restrict_to_grid(steps, canonical, grid)
        step, threshold = plateau_point(
            steps, canonical, cfg.weights.get(metric, 0.0),
            use_population_std=cfg.use_population_std,
        )
        per_metric[metric] = MetricSuggestion(step=step, threshold=threshold)

    return BudgetSuggestion(
        prompt_id=prompt_ids.pop(),
        per_metric=per_metric,
        t_star=max(s.step for s in per_metric.values()),
    )
