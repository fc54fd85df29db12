"""Training-corpus structure: timestep grids, prompt dedup, seed
aggregation, series densification, and the train/eval split."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IncompleteDatasetError, ValidationError
from .types import EmbeddingVector, Metric, MetricSample, MetricSeries, TimestepGrid


@dataclass(frozen=True)
class GridSpec:
    """Construction rule for the sampled timestep set.

    The grid is the sorted union of the power-law samples 1 + 2**(i-1)
    for i in 1..max_i, the explicit extras, and {1} when include_one.
    """

    max_i: int = 8
    extras: frozenset[int] = frozenset({22, 27, 42})
    include_one: bool = True

    def __post_init__(self):
        if self.max_i < 1:
            raise ValidationError(f"max_i must be >= 1, got {self.max_i}")
        extras = frozenset(int(e) for e in self.extras)
        if any(e < 1 for e in extras):
            raise ValidationError("grid extras must all be >= 1")
        object.__setattr__(self, "extras", extras)


@dataclass(frozen=True)
class DedupConfig:
    """Similarity ceiling for the greedy prompt-dedup scan (ascending id)."""

    threshold: float = 0.75

    def __post_init__(self):
        if not 0.0 < self.threshold <= 1.0:
            raise ValidationError(f"dedup threshold must be in (0, 1], got {self.threshold}")


def build_timestep_grid(spec: GridSpec) -> TimestepGrid:
    """Materialize the grid for a spec; see GridSpec for the rule."""
    steps = {1 + 2 ** (i - 1) for i in range(1, spec.max_i + 1)}
    steps |= spec.extras
    if spec.include_one:
        steps.add(1)
    return TimestepGrid(tuple(sorted(steps)))


def _direction(values: np.ndarray, what: str) -> np.ndarray:
    # scale by the largest component first so squared norms of very small
    # vectors cannot underflow to zero
    peak = float(np.max(np.abs(values)))
    if peak == 0.0:
        raise ValidationError(f"{what}: cosine similarity undefined for a zero vector")
    scaled = values / peak
    return scaled / float(np.linalg.norm(scaled))


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """dot(a, b) / (|a| |b|); both vectors must be nonzero and same width."""
    if a.dim != b.dim:
        raise ValidationError(f"embedding dim mismatch: {a.dim} vs {b.dim}")
    return float(np.dot(_direction(a.values, "lhs"), _direction(b.values, "rhs")))


def dedup_prompts(
    embeddings: list[tuple[int, EmbeddingVector]],
    cfg: DedupConfig,
) -> list[int]:
    """Greedy near-duplicate pruning over prompt embeddings.

    Scans in ascending id order; a candidate survives only if its cosine
    similarity to every already-kept embedding stays below the threshold.
    The result therefore satisfies the pairwise constraint: all kept
    pairs are strictly below the ceiling.
    """
    ids = [rec_id for rec_id, _ in embeddings]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate ids in embedding list")
    ordered = sorted(embeddings, key=lambda rec: rec[0])

    kept_ids: list[int] = []
    kept_rows: list[np.ndarray] = []
    for rec_id, vec in ordered:
        unit = _direction(vec.values, f"prompt {rec_id}")
        if kept_rows:
            sims = np.stack(kept_rows) @ unit
            if float(np.max(sims)) >= cfg.threshold:
                continue
        kept_ids.append(rec_id)
        kept_rows.append(unit)
    return kept_ids


def aggregate_seeds(
    samples: list[MetricSample],
    grid: TimestepGrid,
) -> list[MetricSeries]:
    """Collapse per-seed samples into per-(prompt, metric) mean curves.

    Every (prompt, metric) group must cover every grid step with at least
    one seed; holes abort with the full list of missing cells rather than
    silently imputing values.
    """
    grid_steps = list(grid.steps)
    grid_set = set(grid_steps)
    cells: dict[tuple[int, Metric], dict[int, list[float]]] = {}
    for s in samples:
        if s.timestep not in grid_set:
            raise ValidationError(
                f"sample (prompt {s.prompt_id}, {s.metric}) at step {s.timestep} "
                f"is off-grid"
            )
        cells.setdefault((s.prompt_id, s.metric), {}).setdefault(s.timestep, []).append(s.value)

    holes = []
    for (pid, metric), per_step in sorted(cells.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        for step in grid_steps:
            if step not in per_step:
                holes.append((pid, metric.value, step))
    if holes:
        raise IncompleteDatasetError(holes)

    out = []
    for (pid, metric), per_step in sorted(cells.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        values = np.array([float(np.mean(per_step[t])) for t in grid_steps])
        out.append(MetricSeries(
            prompt_id=pid, metric=metric,
            steps=np.array(grid_steps, dtype=np.int64), values=values,
        ))
    return out


def densify_series(s: MetricSeries) -> MetricSeries:
    """Piecewise-linear interpolation onto every integer step 1..last.

    Sampled steps are preserved exactly; the input must start at step 1
    and carry at least two points so every integer lies on a segment.
    """
    if len(s) < 2:
        raise ValidationError("densify needs at least 2 sampled points")
    if int(s.steps[0]) != 1:
        raise ValidationError("densify requires the series to start at step 1")
    dense_steps = np.arange(1, s.last_step + 1, dtype=np.int64)
    dense_values = np.interp(dense_steps, s.steps, s.values)
    # np.interp returns the sample values exactly at the sample abscissae,
    # so the grid points survive bitwise.
    return MetricSeries(
        prompt_id=s.prompt_id, metric=s.metric,
        steps=dense_steps, values=dense_values, dense=True,
    )


def split_dataset(
    prompt_ids: list[int],
    fraction: float,
    rng_seed: int,
) -> tuple[list[int], list[int]]:
    """Deterministic shuffled train/eval split; |train| = round(fraction*n)."""
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"split fraction must be in (0, 1), got {fraction}")
    ids = sorted(set(int(i) for i in prompt_ids))
    if len(ids) != len(prompt_ids):
        raise ValidationError("prompt ids for split must be unique")
    n = len(ids)
    if n < 2:
        raise ValidationError("split needs at least 2 prompts")
    rng = np.random.default_rng(rng_seed)
    perm = rng.permutation(n)
    n_train = round(fraction * n)
    train = sorted(ids[i] for i in perm[:n_train])
    eval_ = sorted(ids[i] for i in perm[n_train:])
    return train, eval_
