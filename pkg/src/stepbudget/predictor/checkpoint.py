"""Checkpoint persistence and inference helpers.

A checkpoint on disk is a directory holding ``manifest.json`` (config,
metric, grid, seed, loss trace, tensor table) and ``params.bfck`` -- a
little-endian blob: magic "BFCK", version u32, tensor count u32, then
each tensor's f32 data flattened in manifest order.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatError, ValidationError
from ..types import EmbeddingVector, Metric, MetricSeries, TimestepGrid
from .model import ModelConfig, PredictorParams, forward, init_params

BFCK_MAGIC = b"BFCK"
BFCK_VERSION = 1
MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bfck"


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_mae: float


@dataclass
class PredictorCheckpoint:
    """Learned parameters of one metric's regressor plus provenance."""

    params: PredictorParams
    config: ModelConfig
    metric: Metric
    grid: TimestepGrid
    trace: list[EpochStats]


def save_checkpoint(ckpt: PredictorCheckpoint, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = list(ckpt.params.named_tensors())
    manifest = {
        "format_version": 1,
        "metric": ckpt.metric.value,
        "grid": list(ckpt.grid.steps),
        "rng_seed": ckpt.config.rng_seed,
        "config": ckpt.config.to_dict(),
        "input_dim": ckpt.params.input_dim,
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors],
        "trace": [
            {"epoch": s.epoch, "train_loss": s.train_loss,
             "val_loss": s.val_loss, "val_mae": s.val_mae}
            for s in ckpt.trace
        ],
    }
    with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    with open(directory / BLOB_NAME, "wb") as fh:
        fh.write(BFCK_MAGIC)
        fh.write(struct.pack("<II", BFCK_VERSION, len(tensors)))
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(directory) -> PredictorCheckpoint:
    directory = Path(directory)
    try:
        with open(directory / MANIFEST_NAME, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{directory}: bad manifest: {exc}") from None
    if manifest.get("format_version") != 1:
        raise FormatError(f"unsupported checkpoint version {manifest.get('format_version')}")

    config = ModelConfig.from_dict(manifest["config"])
    metric = Metric.parse(manifest["metric"])
    grid = TimestepGrid(tuple(manifest["grid"]))
    input_dim = int(manifest["input_dim"])

    # Rebuild the parameter structure from config, then fill by name; any
    # tampered shape in the manifest shows up as a mismatch here or as a
    # blob-length error below.
    params = init_params(config, input_dim, np.random.default_rng(0)).zeros_like()
    expected = {name: arr.shape for name, arr in params.named_tensors()}
    declared = [(t["name"], tuple(t["shape"])) for t in manifest["tensors"]]
    if [n for n, _ in declared] != list(expected):
        raise FormatError("manifest tensor table does not match the model structure")
    for name, shape in declared:
        if shape != expected[name]:
            raise FormatError(f"tensor {name}: manifest shape {shape} != expected {expected[name]}")

    blob = (directory / BLOB_NAME).read_bytes()
    if blob[:4] != BFCK_MAGIC:
        raise FormatError(f"bad blob magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != BFCK_VERSION:
        raise FormatError(f"unsupported blob version {version}")
    if count != len(declared):
        raise FormatError(f"blob tensor count {count} != manifest count {len(declared)}")
    total = sum(int(np.prod(shape)) for _, shape in declared)
    if len(blob) != 12 + 4 * total:
        raise FormatError(
            f"blob length {len(blob)} != expected {12 + 4 * total} for declared shapes"
        )
    offset = 12
    for name, shape in declared:
        size = int(np.prod(shape))
        flat = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
        params.set_tensor(name, flat.astype(np.float64).reshape(shape))
        offset += 4 * size

    trace = [
        EpochStats(int(t["epoch"]), float(t["train_loss"]),
                   float(t["val_loss"]), float(t["val_mae"]))
        for t in manifest.get("trace", [])
    ]
    return PredictorCheckpoint(params=params, config=config, metric=metric,
                               grid=grid, trace=trace)


def predict_series(
    ckpt: PredictorCheckpoint,
    prompt_embedding: EmbeddingVector,
    metric: Metric,
    prompt_id: int = 0,
    grid: TimestepGrid | None = None,
) -> MetricSeries:
    """Dense predicted curve over 1..t_N for one prompt.

    A caller-supplied grid is refused unless its final step matches the
    grid the checkpoint was trained under.
    """
    if metric != ckpt.metric:
        raise ValidationError(
            f"checkpoint is for {ckpt.metric.value}, asked for {metric.value}"
        )
    if grid is not None and grid.last != ckpt.grid.last:
        raise ValidationError(
            f"grid mismatch: checkpoint trained to t_N={ckpt.grid.last}, "
            f"requested t_N={grid.last}"
        )
    t_n = ckpt.grid.last
    steps = np.arange(1, t_n + 1, dtype=np.int64)
    values = forward(ckpt.params, ckpt.config, prompt_embedding, steps)
    return MetricSeries(
        prompt_id=prompt_id, metric=metric, steps=steps,
        values=np.clip(values, 0.0, 1.0), dense=True,
    )


def write_training_log(path, trace: list[EpochStats]) -> None:
    """CSV loss trace: epoch,train_loss,val_loss,val_mae."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss,val_mae\n")
        for s in trace:
            fh.write(f"{s.epoch},{s.train_loss!r},{s.val_loss!r},{s.val_mae!r}\n")
