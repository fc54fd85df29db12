import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stepbudget.budget import (
    DEFAULT_WEIGHTS,
    PlateauConfig,
    canonicalize,
    plateau_point,
    suggest,
)
from stepbudget.errors import ValidationError
from stepbudget.types import Metric, MetricSeries, Orientation, TimestepGrid

from conftest import PAPER_GRID_STEPS


def _series(metric, steps, values, pid=1):
    return MetricSeries(pid, metric, np.asarray(steps), np.asarray(values, dtype=float))


def _scan_oracle(steps, values, weight):
    """Independent restatement of the rule: statistics, then linear scan."""
    med = float(np.median(values))
    std = float(np.std(values))
    thr = med + weight * std
    for step, value in zip(steps, values):
        if value >= thr:
            return int(step), thr
    return int(steps[-1]), thr


# ---------------------------------------------------------------------------
# canonicalize

def test_canonicalize_upgood_passthrough():
    s = _series(Metric.LSNR, [1, 2], [0.1, 0.9])
    np.testing.assert_array_equal(canonicalize(s), [0.1, 0.9])


def test_canonicalize_downgood_reflects():
    s = _series(Metric.DSIM, [1, 2], [0.1, 0.9])
    np.testing.assert_allclose(canonicalize(s), [0.9, 0.1], atol=1e-15)


def test_canonicalize_involution():
    s = _series(Metric.DSIM, [1, 2], [0.3, 0.7])
    once = canonicalize(s)
    twice = 1.0 - once
    np.testing.assert_allclose(twice, s.values, atol=1e-15)


def test_canonicalize_orientation_override():
    s = _series(Metric.LSNR, [1, 2], [0.1, 0.9])
    flipped = canonicalize(s, {Metric.LSNR: Orientation.DOWN_GOOD})
    np.testing.assert_allclose(flipped, [0.9, 0.1], atol=1e-15)


# ---------------------------------------------------------------------------
# plateau_point

def test_plateau_constant_series_first_step():
    steps = np.array(PAPER_GRID_STEPS)
    step, thr = plateau_point(steps, np.full(12, 0.5), weight=0.7)
    assert step == 1
    assert thr == 0.5


def test_plateau_hand_computed_step_series():
    steps = np.array(PAPER_GRID_STEPS)
    values = np.array([0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1], dtype=float)
    step, thr = plateau_point(steps, values, weight=0.5)
    assert step == 33
    assert thr == pytest.approx(0.5 * math.sqrt(2.0 / 9.0), abs=1e-12)


def test_plateau_matches_scan_oracle(rng):
    for _ in range(1000):
        n = int(rng.integers(3, 20))
        values = np.sort(rng.random(n))
        steps = np.unique(rng.integers(1, 200, size=n))
        while steps.size < n:
            steps = np.unique(np.concatenate([steps, rng.integers(1, 200, size=n)]))
        steps = steps[:n]
        weight = float(rng.uniform(0.0, 1.0))
        assert plateau_point(steps, values, weight) == _scan_oracle(steps, values, weight)


def test_plateau_weight_monotonicity(rng):
    steps = np.arange(1, 31)
    for _ in range(100):
        values = np.sort(rng.random(30))
        last = 0
        for weight in np.linspace(0.0, 2.0, 21):
            step, _ = plateau_point(steps, values, float(weight))
            assert step >= last
            last = step


def test_plateau_shift_invariance(rng):
    steps = np.arange(1, 25)
    values = np.sort(rng.random(24))
    base, _ = plateau_point(steps, values, 0.4)
    shifted, _ = plateau_point(steps, values + 3.7, 0.4)
    assert base == shifted


def test_plateau_decreasing_series():
    # a decreasing series starts above any threshold the data can reach at
    # moderate weights, so the earliest crossing is step 1; once the weight
    # pushes the threshold past the maximum the conservative fallback fires
    steps = np.arange(1, 13)
    values = np.linspace(0.9, 0.1, 12)
    step, thr = plateau_point(steps, values, 0.5)
    assert step == 1 and values[0] >= thr
    step, thr = plateau_point(steps, values, 2.0)
    assert step == 12 and thr > values.max()


def test_plateau_sample_std_toggle():
    values = np.array([0.0, 0.0, 1.0, 1.0])
    steps = np.array([1, 2, 3, 4])
    _, thr_pop = plateau_point(steps, values, 1.0, use_population_std=True)
    _, thr_smp = plateau_point(steps, values, 1.0, use_population_std=False)
    assert thr_pop == pytest.approx(0.5 + 0.5, abs=1e-12)
    assert thr_smp == pytest.approx(0.5 + math.sqrt(1.0 / 3.0), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=40),
       st.floats(0.0, 3.0))
def test_plateau_step_always_in_range(values, weight):
    steps = np.arange(1, len(values) + 1)
    step, _ = plateau_point(steps, np.array(values), weight)
    assert 1 <= step <= len(values)


# ---------------------------------------------------------------------------
# suggest

def _triple(curves, pid=1):
    return {
        Metric.LSNR: _series(Metric.LSNR, curves[0][0], curves[0][1], pid),
        Metric.DSIM: _series(Metric.DSIM, curves[1][0], curves[1][1], pid),
        Metric.ICLIP: _series(Metric.ICLIP, curves[2][0], curves[2][1], pid),
    }


def test_suggest_all_constant_gives_one():
    steps = [1, 5, 9]
    triple = _triple([
        (steps, [0.5] * 3),
        (steps, [0.5] * 3),
        (steps, [0.5] * 3),
    ])
    out = suggest(triple)
    assert out.t_star == 1
    assert all(s.step == 1 for s in out.per_metric.values())


def test_suggest_max_rule():
    steps = [1, 3, 9, 27]
    early = [0.0, 0.0, 1.0, 1.0]        # crosses at 9
    late = [0.0, 0.0, 0.0, 1.0]         # crosses at 27
    triple = _triple([
        (steps, early),
        (steps, [1 - v for v in early]),  # down-good, canonicalizes to early
        (steps, late),
    ])
    out = suggest(triple)
    assert out.per_metric[Metric.LSNR].step == 9
    assert out.per_metric[Metric.DSIM].step == 9
    assert out.per_metric[Metric.ICLIP].step == 27
    assert out.t_star == 27


def test_suggest_compositional_oracle(rng):
    steps = np.array(PAPER_GRID_STEPS)
    cfg = PlateauConfig()
    for _ in range(50):
        triple = {}
        expected = {}
        for metric in Metric:
            values = np.sort(rng.random(12))
            raw = 1.0 - values if metric is Metric.DSIM else values
            triple[metric] = _series(metric, steps, raw)
            expected[metric] = _scan_oracle(steps, values, DEFAULT_WEIGHTS[metric])[0]
        out = suggest(triple, cfg)
        for metric in Metric:
            assert out.per_metric[metric].step == expected[metric]
        assert out.t_star == max(expected.values())


def test_suggest_missing_metric():
    steps = [1, 2]
    partial = {Metric.LSNR: _series(Metric.LSNR, steps, [0.1, 0.9])}
    with pytest.raises(ValidationError, match="missing series"):
        suggest(partial)


def test_suggest_mixed_prompts_rejected():
    steps = [1, 2]
    triple = _triple([(steps, [0.1, 0.9])] * 3)
    triple[Metric.DSIM] = _series(Metric.DSIM, steps, [0.5, 0.5], pid=2)
    with pytest.raises(ValidationError, match="mix prompts"):
        suggest(triple)


def test_suggest_grid_restriction_changes_statistics(paper_grid):
    # dense saturating curve: the dense median sits on the plateau and the
    # rule degenerates to the final step; restricted to the log grid the
    # crossing is informative
    dense_steps = np.arange(1, 130)
    curve = 0.15 + 0.73 * (1.0 - np.exp(-dense_steps / 20.0))
    triple = _triple([
        (dense_steps, curve),
        (dense_steps, 1.0 - curve),
        (dense_steps, curve),
    ])
    degenerate = suggest(triple)
    assert degenerate.t_star == 129
    restricted = suggest(triple, grid=paper_grid)
    assert restricted.t_star < 129
    assert all(s.step in paper_grid for s in restricted.per_metric.values())


def test_suggest_grid_requires_coverage(paper_grid):
    steps = [1, 2, 3]
    triple = _triple([(steps, [0.1, 0.5, 0.9])] * 3)
    with pytest.raises(ValidationError, match="cover"):
        suggest(triple, grid=paper_grid)


def test_suggestion_json_shape():
    steps = [1, 3, 9, 27]
    triple = _triple([(steps, [0.0, 0.0, 1.0, 1.0])] * 3, pid=77)
    out = suggest(triple).to_dict()
    assert out["prompt_id"] == 77
    assert set(out["per_metric"]) == {"LSNR", "DSIM", "ICLIP"}
    assert set(out["per_metric"]["LSNR"]) == {"t", "threshold"}
    assert out["t_star"] == max(v["t"] for v in out["per_metric"].values())


def test_plateau_config_rejects_negative_weight():
    with pytest.raises(ValidationError):
        PlateauConfig(weights={Metric.LSNR: -0.1})
