"""Extractor release gate: everything this package emits must be
consumable by the downstream pipeline package with zero warnings, the
self-pair scores must be exact, and generation must be bitwise
deterministic. The downstream package is a test-only dependency here;
the runtime has no link in either direction beyond the file formats.
"""
import json
import shutil
import subprocess
import sys
import warnings

import numpy as np
import pytest

from sbextract.cli import main
from sbextract.embed import HashEmbedder, embed_prompts
from sbextract.formats import atomic_write_bytes, encode_embeddings, metric_rows
from sbextract.generate import ProceduralGenerator, generate_tree
from sbextract.scoring import dsim_scores, get_descriptor, get_distance, iclip_scores

from conftest import SMALL_GRID

stepbudget = pytest.importorskip(
    "stepbudget", reason="conformance gate needs the downstream package"
)


def _assert_no_warnings(fn, *args):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = fn(*args)
    assert caught == []
    return result


def test_bfem_conformance_zero_warnings(tmp_path):
    from stepbudget.formats import read_embeddings_file

    prompts = [(i, f"conformance prompt {i}") for i in range(10)]
    records = embed_prompts(prompts, HashEmbedder(dim=48))
    out = tmp_path / "emb.bfem"
    atomic_write_bytes(out, encode_embeddings(records, 48))

    parsed = _assert_no_warnings(read_embeddings_file, out)
    assert [rid for rid, _ in parsed] == [rid for rid, _ in records]
    for (_, got), (_, sent) in zip(parsed, records):
        np.testing.assert_array_equal(
            got.values, np.asarray(sent, dtype=np.float32).astype(np.float64)
        )
    print("PASS: BFEM conformance (10 records parse downstream, zero warnings)")


def test_metrics_conformance_and_self_pairs(image_tree, tmp_path):
    from stepbudget.formats import read_metrics_file
    from stepbudget.types import Metric

    dsim_rows = dsim_scores(image_tree, SMALL_GRID, get_distance("pyramid"))
    iclip_rows = iclip_scores(image_tree, SMALL_GRID, get_descriptor("stats"))
    dsim_path = tmp_path / "dsim.csv"
    iclip_path = tmp_path / "iclip.csv"
    dsim_path.write_text(metric_rows(dsim_rows))
    iclip_path.write_text(metric_rows(iclip_rows))

    parsed_dsim = _assert_no_warnings(read_metrics_file, dsim_path)
    parsed_iclip = _assert_no_warnings(read_metrics_file, iclip_path)
    assert len(parsed_dsim) == len(dsim_rows)
    assert len(parsed_iclip) == len(iclip_rows)

    final = SMALL_GRID[-1]
    for sample in parsed_dsim:
        assert sample.metric is Metric.DSIM
        if sample.timestep == final:
            assert sample.value == 0.0
    for sample in parsed_iclip:
        assert sample.metric is Metric.ICLIP
        if sample.timestep == final:
            assert sample.value == 1.0
    print("PASS: metrics conformance (DSIM self-pair 0.0, ICLIP self-pair 1.0, "
          "zero warnings)")


def test_generation_determinism(tmp_path):
    prompts = [(i, f"determinism prompt {i}") for i in range(2)]
    for name in ("a", "b"):
        generate_tree(tmp_path / name, prompts, [1, 9, 65], (0, 3),
                      ProceduralGenerator(resolution=40))
    files_a = sorted((tmp_path / "a").rglob("*.png"))
    files_b = sorted((tmp_path / "b").rglob("*.png"))
    assert len(files_a) == 12
    for pa, pb in zip(files_a, files_b):
        assert pa.read_bytes() == pb.read_bytes()
    print("PASS: generation determinism (12 images bitwise stable across runs)")


def test_generated_sharpness_rises_with_steps(tmp_path):
    from stepbudget.imagemetrics import l_snr_db, load_gray_image

    prompts = [(i, f"sharpness prompt {i}") for i in range(10)]
    tree = tmp_path / "images"
    generate_tree(tree, prompts, [1, 65], (0,), ProceduralGenerator(resolution=48))
    wins = 0
    for pid in range(10):
        early = l_snr_db(load_gray_image(tree / str(pid) / "0" / "1.png"))
        late = l_snr_db(load_gray_image(tree / str(pid) / "0" / "65.png"))
        wins += int(early < late)
    assert wins > 5
    print(f"PASS: sharpness ordering ({wins}/10 prompts sharper at step 65)")


def test_image_tree_feeds_downstream_scorer(image_tree, tmp_path):
    from stepbudget.cli import main as sb_main
    from stepbudget.formats import read_metrics_file
    from stepbudget.types import Metric

    out = tmp_path / "lsnr.csv"
    code = sb_main(["lsnr", "--images", str(image_tree), "--out", str(out),
                    "--threads", "1", "--run-log", str(tmp_path / "runs.jsonl")])
    assert code == 0
    samples = _assert_no_warnings(read_metrics_file, out)
    assert len(samples) == 3 * 2 * len(SMALL_GRID)
    assert all(s.metric is Metric.LSNR for s in samples)
    print("PASS: image tree consumed by the downstream sharpness scorer")


def test_embed_bridge_against_downstream_cli(tmp_path, rng):
    from stepbudget.dataset import GridSpec, build_timestep_grid
    from stepbudget.predictor import ModelConfig, TrainingExample, save_checkpoint, train
    from stepbudget.types import EmbeddingVector, Metric

    sbextract_bin = shutil.which("sbextract")
    if sbextract_bin is None:
        pytest.skip("sbextract console script not on PATH")

    # train tiny downstream predictors on hash-width embeddings
    grid = build_timestep_grid(GridSpec(max_i=3, extras=frozenset(), include_one=True))
    cfg = ModelConfig(embed_dim=64, hidden=4, num_layers=1, mlp_dims=(8, 1),
                      dropout_rate=0.0, learning_rate=1e-3, batch_size=2,
                      epochs=2, rng_seed=0)
    embedder = HashEmbedder(dim=64)
    texts = [f"bridge prompt {i}" for i in range(4)]
    vectors = embedder.embed(texts)
    ckpts = tmp_path / "ckpts"
    for metric in Metric:
        examples = [
            TrainingExample(i, EmbeddingVector(vectors[i]), metric,
                            rng.random(grid.last))
            for i in range(4)
        ]
        save_checkpoint(train(cfg, examples, ([0, 1, 2], [3]), grid),
                        ckpts / metric.value)

    out = tmp_path / "suggestion.json"
    proc = subprocess.run(
        [sys.executable, "-m", "stepbudget.cli", "suggest",
         "--checkpoints", str(ckpts),
         "--prompt-text", "a colorful park with a crowd",
         "--extractor", sbextract_bin,
         "--out", str(out), "--run-log", str(tmp_path / "runs.jsonl")],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE,
    )
    assert proc.returncode == 0, proc.stderr.decode()
    payload = json.loads(out.read_text())
    assert set(payload) == {"prompt_id", "t_star", "per_metric"}
    print("PASS: embed bridge drives the downstream suggest CLI end to end")


def test_cli_outputs_parse_downstream(image_tree, tmp_path):
    from stepbudget.formats import read_metrics_file

    for mode in ("dsim", "iclip"):
        out = tmp_path / f"{mode}.csv"
        grid_flag = ",".join(str(s) for s in SMALL_GRID)
        assert main([mode, "--images", str(image_tree), "--out", str(out),
                     "--grid", grid_flag]) == 0
        _assert_no_warnings(read_metrics_file, out)
    print("PASS: CLI metric outputs parse downstream with zero warnings")
