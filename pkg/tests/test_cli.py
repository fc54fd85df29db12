import json
import stat

import numpy as np
import pytest
from PIL import Image

from stepbudget.cli import main
from stepbudget.dataset import GridSpec, build_timestep_grid
from stepbudget.formats import (
    emit_metric_table,
    parse_metric_table,
    read_series_file,
    read_split_json,
    write_embeddings_file,
)
from stepbudget.predictor import ModelConfig, TrainingExample, save_checkpoint, train
from stepbudget.types import EmbeddingVector, Metric, MetricSample, TimestepGrid

from conftest import PAPER_GRID_STEPS


def _run(args, tmp_path):
    return main(list(args) + ["--run-log", str(tmp_path / "runs.jsonl")])


def test_grid_prints_paper_steps(tmp_path, capsys):
    code = _run(["grid", "--max-i", "8", "--extras", "22,27,42", "--include-one",
                 "--out", "-"], tmp_path)
    assert code == 0
    assert json.loads(capsys.readouterr().out) == PAPER_GRID_STEPS


def test_grid_writes_file(tmp_path):
    out = tmp_path / "grid.json"
    code = _run(["grid", "--out", str(out)], tmp_path)
    assert code == 0
    assert json.loads(out.read_text()) == PAPER_GRID_STEPS


def test_run_log_collects_provenance(tmp_path):
    log = tmp_path / "runs.jsonl"
    for _ in range(2):
        assert main(["grid", "--out", str(tmp_path / "g.json"),
                     "--run-log", str(log)]) == 0
    entries = [json.loads(line) for line in log.read_text().splitlines()]
    assert len(entries) == 2
    assert entries[0]["command"] == "grid"
    assert {"config_hash", "seed", "version", "timestamp"} <= set(entries[0])
    # outputs themselves carry no timestamps
    assert (tmp_path / "g.json").read_text() == json.dumps(PAPER_GRID_STEPS) + "\n"


def test_dedup_cli(tmp_path, rng):
    records = []
    for i in range(6):
        v = rng.normal(size=8)
        records.append((i, EmbeddingVector(v / np.linalg.norm(v))))
    records.append((6, records[0][1]))  # exact duplicate of id 0
    path = tmp_path / "emb.bfem"
    write_embeddings_file(path, records)
    out = tmp_path / "kept.json"
    code = _run(["dedup", "--embeddings", str(path), "--threshold", "0.99",
                 "--out", str(out)], tmp_path)
    assert code == 0
    kept = json.loads(out.read_text())
    assert 0 in kept and 6 not in kept


def test_lsnr_tree(tmp_path, rng):
    root = tmp_path / "images"
    for pid in (3, 4):
        for seed in (0, 1):
            for step in (1, 65):
                d = root / str(pid) / str(seed)
                d.mkdir(parents=True, exist_ok=True)
                arr = (rng.random((16, 16)) * 255).astype(np.uint8)
                Image.fromarray(arr, mode="L").save(d / f"{step}.png")
    out = tmp_path / "metrics.csv"
    code = _run(["lsnr", "--images", str(root), "--out", str(out), "--threads", "1"],
                tmp_path)
    assert code == 0
    samples = parse_metric_table(out.read_text())
    assert len(samples) == 8
    assert all(s.metric is Metric.LSNR for s in samples)
    assert {(s.prompt_id, s.seed, s.timestep) for s in samples} == {
        (pid, seed, step) for pid in (3, 4) for seed in (0, 1) for step in (1, 65)
    }


def test_lsnr_threads_match_sequential(tmp_path, rng):
    root = tmp_path / "images"
    for step in (1, 9):
        d = root / "0" / "0"
        d.mkdir(parents=True, exist_ok=True)
        arr = (rng.random((12, 12)) * 255).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(d / f"{step}.png")
    out1 = tmp_path / "m1.csv"
    out2 = tmp_path / "m2.csv"
    assert _run(["lsnr", "--images", str(root), "--out", str(out1), "--threads", "1"],
                tmp_path) == 0
    assert _run(["lsnr", "--images", str(root), "--out", str(out2), "--threads", "4"],
                tmp_path) == 0
    assert out1.read_text() == out2.read_text()


def test_dataset_cli(tmp_path, rng, paper_grid):
    samples = [
        MetricSample(pid, seed, step, metric, float(rng.random()))
        for pid in (0, 1)
        for metric in (Metric.LSNR, Metric.DSIM, Metric.ICLIP)
        for seed in range(4)
        for step in paper_grid.steps
    ]
    metrics_path = tmp_path / "metrics.csv"
    metrics_path.write_text(emit_metric_table(samples))
    out_dir = tmp_path / "ds"
    code = _run(["dataset", "--metrics", str(metrics_path), "--out-dir", str(out_dir),
                 "--split-fraction", "0.5", "--seed", "3"], tmp_path)
    assert code == 0
    series = read_series_file(out_dir / "series.csv")
    assert len(series) == 6
    assert all(s.dense and len(s) == 129 for s in series)
    train_ids, eval_ids = read_split_json(out_dir / "split.json")
    assert sorted(train_ids + eval_ids) == [0, 1]


def test_dataset_cli_rejects_holes(tmp_path):
    metrics_path = tmp_path / "metrics.csv"
    metrics_path.write_text(
        "prompt_id,seed,timestep,metric,value\n0,0,1,LSNR,0.5\n"
    )
    code = _run(["dataset", "--metrics", str(metrics_path),
                 "--out-dir", str(tmp_path / "ds")], tmp_path)
    assert code == 1


def test_missing_input_is_io_error(tmp_path):
    code = _run(["dedup", "--embeddings", str(tmp_path / "nope.bfem"),
                 "--out", "-"], tmp_path)
    assert code == 2


def test_bad_config_is_validation_error(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("not json")
    code = _run(["grid", "--config", str(cfg), "--out", "-"], tmp_path)
    assert code == 1


def test_synth_idempotent(tmp_path):
    for name in ("a", "b"):
        code = _run(["synth", "--n", "6", "--seed", "7", "--dim", "8",
                     "--out-dir", str(tmp_path / name)], tmp_path)
        assert code == 0
    files_a = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files_a == ["embeddings.bfem", "prompts.jsonl", "series.csv",
                       "split.json", "truth.json"]
    for name in files_a:
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


def _tiny_checkpoints(tmp_path, rng):
    grid = TimestepGrid((1, 2, 3, 5, 8))
    cfg = ModelConfig(embed_dim=8, hidden=4, num_layers=1, mlp_dims=(8, 1),
                      dropout_rate=0.0, learning_rate=1e-3, batch_size=2,
                      epochs=2, rng_seed=1)
    ckpt_dir = tmp_path / "ckpts"
    embeddings = [(i, EmbeddingVector(rng.normal(size=8))) for i in range(4)]
    for metric in Metric:
        examples = [
            TrainingExample(pid, vec, metric, rng.random(grid.last))
            for pid, vec in embeddings
        ]
        ckpt = train(cfg, examples, ([0, 1, 2], [3]), grid)
        save_checkpoint(ckpt, ckpt_dir / metric.value)
    return ckpt_dir, embeddings


def test_suggest_cli_json_shape(tmp_path, rng, capsys):
    ckpt_dir, embeddings = _tiny_checkpoints(tmp_path, rng)
    emb_path = tmp_path / "one.bfem"
    write_embeddings_file(emb_path, embeddings[:1])
    code = _run(["suggest", "--checkpoints", str(ckpt_dir),
                 "--prompt-embedding", str(emb_path), "--out", "-"], tmp_path)
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert set(payload) == {"prompt_id", "t_star", "per_metric"}
    assert set(payload["per_metric"]) == {"LSNR", "DSIM", "ICLIP"}
    assert payload["t_star"] == max(v["t"] for v in payload["per_metric"].values())
    assert 1 <= payload["t_star"] <= 8


def test_predict_cli_emits_dense_series(tmp_path, rng):
    ckpt_dir, embeddings = _tiny_checkpoints(tmp_path, rng)
    emb_path = tmp_path / "emb.bfem"
    write_embeddings_file(emb_path, embeddings[:2])
    out = tmp_path / "pred.csv"
    code = _run(["predict", "--checkpoints", str(ckpt_dir),
                 "--prompt-embedding", str(emb_path), "--out", str(out),
                 "--threads", "1"], tmp_path)
    assert code == 0
    series = read_series_file(out)
    assert len(series) == 6  # 2 prompts x 3 metrics
    assert all(s.dense and len(s) == 8 for s in series)


def test_prompt_text_via_extractor_stub(tmp_path, rng):
    ckpt_dir, _ = _tiny_checkpoints(tmp_path, rng)
    stub = tmp_path / "stub_extractor.py"
    stub.write_text(
        "#!/usr/bin/env python3\n"
        "import json, struct, sys\n"
        "lines = [json.loads(l) for l in sys.stdin if l.strip()]\n"
        "out = sys.stdout.buffer\n"
        "out.write(b'BFEM' + struct.pack('<III', 1, len(lines), 8))\n"
        "for obj in lines:\n"
        "    out.write(struct.pack('<Q', obj['id']))\n"
        "    seed = (len(obj['text']) % 7) + 1\n"
        "    out.write(struct.pack('<8f', *[seed * 0.1 + i for i in range(8)]))\n"
    )
    stub.chmod(stub.stat().st_mode | stat.S_IEXEC)
    out = tmp_path / "sugg.json"
    code = _run(["suggest", "--checkpoints", str(ckpt_dir),
                 "--prompt-text", "a colorful park with a crowd",
                 "--extractor", str(stub),
                 "--out", str(out)], tmp_path)
    assert code == 0
    payload = json.loads(out.read_text())
    assert set(payload) == {"prompt_id", "t_star", "per_metric"}


def test_unknown_subcommand_errors(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code != 0
