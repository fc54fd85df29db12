import math

import numpy as np
import pytest
from scipy import stats

from stepbudget.budget import BudgetSuggestion, MetricSuggestion, plateau_point
from stepbudget.errors import ValidationError
from stepbudget.evaluation import (
    cost,
    efficiency,
    evaluate_conditions,
    mae,
    relative_quality,
    suggestions_from_series,
    synth_dataset,
    uniform_baseline,
)
from stepbudget.types import CostModel, Metric, MetricSeries, Orientation


def _suggestion(pid, t_star):
    per = {m: MetricSuggestion(step=t_star, threshold=0.0) for m in Metric}
    return BudgetSuggestion(prompt_id=pid, per_metric=per, t_star=t_star)


# ---------------------------------------------------------------------------
# cost model

def test_cost_reference_calibration():
    model = CostModel(6.0615)
    assert cost(65, model) == pytest.approx(394.0, rel=0.01)


def test_cost_rejects_nonpositive_steps():
    with pytest.raises(ValidationError):
        cost(0, CostModel(1.0))
    assert cost(1, CostModel(2.5, fixed_overhead_tflops=1.0)) == 3.5


def test_cost_adaptive_average_crosscheck():
    # ~68 TFLOPs at the reported adaptive average of ~11.2 steps
    model = CostModel(6.0615)
    assert 68.0 / model.tflops_per_step == pytest.approx(11.2, abs=0.05)
    assert cost(11, model) + 0.2 * model.tflops_per_step == pytest.approx(68.0, rel=0.02)


# ---------------------------------------------------------------------------
# efficiency / relative quality

def test_efficiency_arithmetic():
    assert efficiency(0.5, 100.0) == 0.005
    assert efficiency(0.0, 10.0) == 0.0
    with pytest.raises(ValidationError):
        efficiency(0.5, 0.0)


def test_efficiency_batch_means_match_naive(rng):
    qualities = rng.random(50)
    etas = rng.uniform(10, 400, size=50)
    effs = np.array([efficiency(q, e) for q, e in zip(qualities, etas)])
    naive = sum(q / e for q, e in zip(qualities, etas)) / 50.0
    assert float(np.mean(effs)) == pytest.approx(naive, abs=1e-15)


def test_relative_quality_equal_is_zero():
    assert relative_quality(0.5, 0.5) == 0.0


def test_relative_quality_arithmetic():
    assert relative_quality(0.55, 0.50) == pytest.approx(0.10, abs=1e-12)


def test_relative_quality_zero_denominator():
    with pytest.raises(ValidationError):
        relative_quality(0.5, 0.0)


def test_relative_quality_constructed_eight_percent(rng):
    uniform_vals = rng.uniform(0.4, 0.9, size=200)
    ours_vals = uniform_vals * 1.08
    rels = [relative_quality(o, u) for o, u in zip(ours_vals, uniform_vals)]
    assert float(np.mean(rels)) == pytest.approx(0.08, abs=1e-12)


# ---------------------------------------------------------------------------
# uniform baseline

def test_uniform_baseline_identical():
    assert uniform_baseline([_suggestion(i, 9) for i in range(5)]) == 9


def test_uniform_baseline_mean():
    assert uniform_baseline([_suggestion(0, 8), _suggestion(1, 10)]) == 9


def test_uniform_baseline_bankers_rounding():
    assert uniform_baseline([_suggestion(0, 9), _suggestion(1, 10)]) == 10
    assert uniform_baseline([_suggestion(0, 8), _suggestion(1, 9)]) == 8


# ---------------------------------------------------------------------------
# mae

def _dense(pid, metric, values):
    return MetricSeries(pid, metric, np.arange(1, len(values) + 1),
                        np.asarray(values, dtype=float))


def test_mae_identical_zero():
    a = _dense(1, Metric.LSNR, [0.1, 0.2, 0.3])
    assert mae(a, a) == 0.0


def test_mae_constant_offset():
    a = _dense(1, Metric.LSNR, [0.10, 0.20, 0.30])
    b = _dense(1, Metric.LSNR, [0.13, 0.23, 0.33])
    assert mae(a, b) == pytest.approx(0.03, abs=1e-12)


def test_mae_matches_naive(rng):
    va, vb = rng.random(40), rng.random(40)
    a, b = _dense(1, Metric.DSIM, va), _dense(1, Metric.DSIM, vb)
    naive = sum(abs(x - y) for x, y in zip(va, vb)) / 40.0
    assert mae(a, b) == pytest.approx(naive, abs=1e-15)
    assert mae(a, b) == mae(b, a)
    assert mae(a, b) >= 0.0


def test_mae_grid_mismatch():
    a = _dense(1, Metric.LSNR, [0.1, 0.2])
    b = MetricSeries(1, Metric.LSNR, np.array([1, 3]), np.array([0.1, 0.2]))
    with pytest.raises(ValidationError):
        mae(a, b)


# ---------------------------------------------------------------------------
# synthetic dataset

def test_synth_deterministic(paper_grid):
    a = synth_dataset(8, paper_grid, rng_seed=5)
    b = synth_dataset(8, paper_grid, rng_seed=5)
    for (ia, va), (ib, vb) in zip(a.embeddings, b.embeddings):
        assert ia == ib
        np.testing.assert_array_equal(va.values, vb.values)
    for metric in Metric:
        for pid in range(8):
            np.testing.assert_array_equal(
                a.series[metric][pid].values, b.series[metric][pid].values
            )
            assert a.curve_params[metric][pid] == b.curve_params[metric][pid]


def test_synth_downgood_curves_decrease(paper_grid):
    data = synth_dataset(6, paper_grid, rng_seed=3)
    for pid in range(6):
        dsim = data.series[Metric.DSIM][pid].values
        assert dsim[0] > dsim[-1]
        assert np.all(np.diff(dsim) <= 0)
        lsnr = data.series[Metric.LSNR][pid].values
        assert np.all(np.diff(lsnr) >= 0)


def test_synth_values_bounded_and_dense(paper_grid):
    data = synth_dataset(5, paper_grid, rng_seed=1)
    for metric in Metric:
        for series in data.series[metric].values():
            assert series.dense and len(series) == 129
            assert series.values.min() >= 0.0 and series.values.max() <= 1.0


def test_synth_saturated_limit_selects_first_step(paper_grid):
    # tau far below the first step: every sampled value is bitwise equal to
    # the asymptote, the spread is exactly zero, and the rule fires at 1
    data = synth_dataset(4, paper_grid, rng_seed=2, tau_range=(0.01, 0.02))
    per_prompt = {pid: {m: data.series[m][pid] for m in Metric} for pid in range(4)}
    for s in suggestions_from_series(per_prompt, grid=paper_grid):
        assert s.t_star == 1


def test_synth_embeddings_are_unit(paper_grid):
    data = synth_dataset(6, paper_grid, rng_seed=8)
    for _, vec in data.embeddings:
        assert np.linalg.norm(vec.values) == pytest.approx(1.0, abs=1e-12)


def test_plateau_tracks_rise_position(paper_grid, rng):
    # later plateaus get larger suggested steps: prescribe per-prompt rise
    # positions from the late grid half and check rank agreement
    positions = rng.choice([22, 27, 33, 42, 65], size=40)
    steps = np.array(paper_grid.steps)
    suggested = []
    for k in positions:
        values = np.where(steps < k, 0.2, 0.9)
        step, _ = plateau_point(steps, values, 0.3)
        suggested.append(step)
    assert stats.spearmanr(positions, suggested).statistic == pytest.approx(1.0)
    assert list(positions) == suggested


# ---------------------------------------------------------------------------
# report

def _step_truth(positions, low, high):
    dense_steps = np.arange(1, 130)
    truth = {m: {} for m in Metric}
    for pid, k in enumerate(positions):
        for metric in Metric:
            lo, hi = low[metric], high[metric]
            vals = np.where(dense_steps < k, lo, hi).astype(float)
            truth[metric][pid] = MetricSeries(pid, metric, dense_steps, vals)
    return truth


def _fixture_report(rng, tflops=6.0615):
    positions = rng.choice([22, 27, 33, 42, 65], size=32, p=[0.3, 0.25, 0.2, 0.15, 0.1])
    low = {Metric.LSNR: 0.75, Metric.DSIM: 0.28, Metric.ICLIP: 0.78}
    high = {Metric.LSNR: 0.88, Metric.DSIM: 0.15, Metric.ICLIP: 0.92}
    truth = _step_truth(positions, low, high)
    suggestions = [_suggestion(pid, int(k)) for pid, k in enumerate(positions)]
    return evaluate_conditions(truth, suggestions, CostModel(tflops),
                               reference_step=65)


def test_report_conservation_uniform_eta(rng):
    report = _fixture_report(rng)
    uniform = report.summary["conditions"]["UNIFORM"]
    model = CostModel(report.summary["cost_model"]["tflops_per_step"])
    assert uniform["mean_eta_tflops"] == cost(report.summary["uniform_step"], model)


def test_report_conservation_ours_eta(rng):
    report = _fixture_report(rng)
    ours = report.summary["conditions"]["OURS"]
    tflops = report.summary["cost_model"]["tflops_per_step"]
    assert ours["mean_eta_tflops"] == ours["mean_steps"] * tflops


def test_report_efficiency_ordering(rng):
    # fewer steps at equal quality always wins
    model = CostModel(6.0615)
    for _ in range(100):
        q = float(rng.uniform(0.01, 1.0))
        t1, t2 = sorted(rng.integers(1, 130, size=2))
        if t1 == t2:
            continue
        assert efficiency(q, cost(int(t1), model)) > efficiency(q, cost(int(t2), model))


def test_report_stderr_definition(rng):
    report = _fixture_report(rng)
    rows = [r for r in report.rows
            if r["condition"] == "OURS" and r["metric"] == "LSNR"]
    effs = np.array([r["efficiency"] for r in rows])
    expected = float(np.std(effs, ddof=1) / math.sqrt(effs.size))
    got = report.summary["conditions"]["OURS"]["metrics"]["LSNR"]["stderr_efficiency"]
    assert got == pytest.approx(expected, abs=1e-15)


def test_report_skips_zero_baseline(rng):
    dense_steps = np.arange(1, 130)
    truth = {m: {} for m in Metric}
    for metric in Metric:
        # canonical value exactly zero at the uniform step for prompt 0
        raw0 = 1.0 if metric is Metric.DSIM else 0.0
        vals = np.full(129, raw0)
        truth[metric][0] = MetricSeries(0, metric, dense_steps, vals)
        vals1 = np.full(129, 0.5)
        truth[metric][1] = MetricSeries(1, metric, dense_steps, vals1)
    suggestions = [_suggestion(0, 9), _suggestion(1, 9)]
    report = evaluate_conditions(truth, suggestions, CostModel(1.0), reference_step=9)
    for metric in Metric:
        assert report.summary["relative_quality"][metric.value]["skipped"] == 1


def test_report_requires_all_metrics(rng):
    truth = _step_truth([22, 27], {m: 0.2 for m in Metric}, {m: 0.9 for m in Metric})
    del truth[Metric.ICLIP]
    with pytest.raises(ValidationError, match="ICLIP"):
        evaluate_conditions(truth, [_suggestion(0, 22), _suggestion(1, 27)],
                            CostModel(1.0), reference_step=65)


def test_report_reference_step_beyond_range(rng):
    truth = _step_truth([22], {m: 0.2 for m in Metric}, {m: 0.9 for m in Metric})
    with pytest.raises(ValidationError, match="reference step"):
        evaluate_conditions(truth, [_suggestion(0, 22)], CostModel(1.0),
                            reference_step=200)
