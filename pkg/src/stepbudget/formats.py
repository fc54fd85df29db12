"""File formats: embedding blobs, metric tables, prompt lists, splits.

Every writer here has a matching reader and the pair round-trips
losslessly (float payloads at 32-bit precision for the binary formats).
"""
from __future__ import annotations

import io
import json
import struct
from typing import BinaryIO, Iterable, Sequence, TextIO

import numpy as np

from .errors import FormatError, ValidationError
from .types import EmbeddingVector, Metric, MetricSample, MetricSeries, Prompt

BFEM_MAGIC = b"BFEM"
BFEM_VERSION = 1
_BFEM_HEADER = struct.Struct("<4sIII")  # magic, version, count, dim

METRICS_HEADER = "prompt_id,seed,timestep,metric,value"
SERIES_HEADER = "prompt_id,metric,timestep,value"


# ---------------------------------------------------------------------------
# Embeddings (BFEM binary)

def serialize_embeddings(
    records: Sequence[tuple[int, EmbeddingVector]],
    stream: BinaryIO | None = None,
    dim: int | None = None,
) -> bytes | None:
    """Write ``(id, embedding)`` records as a BFEM stream.

    Layout, little-endian: magic "BFEM", version u32, count u32, dim u32,
    then per record [id u64][dim x f32]. ``dim`` must be given for an
    empty record list; otherwise it is taken from the records, which must
    all share one width.
    """
    dims = {vec.dim for _, vec in records}
    if len(dims) > 1:
        raise FormatError(f"mixed embedding dims: {sorted(dims)}")
    if dims:
        dim = dims.pop()
    elif dim is None:
        raise FormatError("empty record list requires an explicit dim")

    out = stream if stream is not None else io.BytesIO()
    out.write(_BFEM_HEADER.pack(BFEM_MAGIC, BFEM_VERSION, len(records), dim))
    for rec_id, vec in records:
        if not 0 <= rec_id < 2**64:
            raise ValidationError(f"record id must be u64, got {rec_id}")
        payload = np.asarray(vec.values, dtype="<f4")
        if not np.all(np.isfinite(payload)):
            raise ValidationError(f"record {rec_id}: non-finite value after f32 cast")
        out.write(struct.pack("<Q", rec_id))
        out.write(payload.tobytes())
    if stream is None:
        return out.getvalue()
    return None


def deserialize_embeddings(data: bytes | BinaryIO) -> list[tuple[int, EmbeddingVector]]:
    """Parse a BFEM stream back into ``(id, embedding)`` records."""
    buf = data if isinstance(data, bytes) else data.read()
    if len(buf) < _BFEM_HEADER.size:
        raise FormatError("BFEM stream truncated before header")
    magic, version, count, dim = _BFEM_HEADER.unpack_from(buf)
    if magic != BFEM_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {BFEM_MAGIC!r}")
    if version != BFEM_VERSION:
        raise FormatError(f"unsupported BFEM version {version}")
    if dim < 1:
        raise FormatError(f"BFEM dim must be positive, got {dim}")
    rec_size = 8 + 4 * dim
    expected = _BFEM_HEADER.size + count * rec_size
    if len(buf) != expected:
        raise FormatError(
            f"BFEM length mismatch: {len(buf)} bytes, expected {expected} "
            f"for count={count} dim={dim}"
        )
    records = []
    offset = _BFEM_HEADER.size
    for _ in range(count):
        (rec_id,) = struct.unpack_from("<Q", buf, offset)
        values = np.frombuffer(buf, dtype="<f4", count=dim, offset=offset + 8)
        records.append((rec_id, EmbeddingVector(values.astype(np.float64))))
        offset += rec_size
    return records


def write_embeddings_file(path, records, dim=None) -> None:
    with open(path, "wb") as fh:
        serialize_embeddings(records, stream=fh, dim=dim)


def read_embeddings_file(path) -> list[tuple[int, EmbeddingVector]]:
    with open(path, "rb") as fh:
        return deserialize_embeddings(fh)


# ---------------------------------------------------------------------------
# Metric tables (metrics.csv)

def parse_metric_table(stream: TextIO | str) -> list[MetricSample]:
    """Parse a ``prompt_id,seed,timestep,metric,value`` table.

    Errors carry the 1-based line number (the header is line 1).
    """
    lines = stream.splitlines() if isinstance(stream, str) else [
        ln.rstrip("\n") for ln in stream
    ]
    if not lines:
        raise FormatError("metric table is empty")
    if lines[0].strip() != METRICS_HEADER:
        raise FormatError(f"line 1: expected header {METRICS_HEADER!r}, got {lines[0]!r}")
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise FormatError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        try:
            sample = MetricSample(
                prompt_id=int(parts[0]),
                seed=int(parts[1]),
                timestep=int(parts[2]),
                metric=Metric.parse(parts[3]),
                value=float(parts[4]),
            )
        except ValidationError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        samples.append(sample)
    return samples


def emit_metric_table(samples: Iterable[MetricSample]) -> str:
    rows = [METRICS_HEADER]
    for s in samples:
        rows.append(f"{s.prompt_id},{s.seed},{s.timestep},{s.metric.value},{s.value!r}")
    return "\n".join(rows) + "\n"


def read_metrics_file(path) -> list[MetricSample]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_metric_table(fh)


def write_metrics_file(path, samples) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(emit_metric_table(samples))


# ---------------------------------------------------------------------------
# Dense/sparse series tables (series.csv)

def emit_series_table(series_list: Iterable[MetricSeries]) -> str:
    rows = [SERIES_HEADER]
    for s in series_list:
        for step, value in zip(s.steps.tolist(), s.values.tolist()):
            rows.append(f"{s.prompt_id},{s.metric.value},{step},{value!r}")
    return "\n".join(rows) + "\n"


def parse_series_table(stream: TextIO | str) -> list[MetricSeries]:
    """Parse a ``prompt_id,metric,timestep,value`` table into per-(prompt,
    metric) series. Rows may arrive in any order; steps are sorted."""
    lines = stream.splitlines() if isinstance(stream, str) else [
        ln.rstrip("\n") for ln in stream
    ]
    if not lines:
        raise FormatError("series table is empty")
    if lines[0].strip() != SERIES_HEADER:
        raise FormatError(f"line 1: expected header {SERIES_HEADER!r}, got {lines[0]!r}")
    groups: dict[tuple[int, Metric], list[tuple[int, float]]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise FormatError(f"line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            pid = int(parts[0])
            metric = Metric.parse(parts[1])
            step = int(parts[2])
            value = float(parts[3])
        except (ValidationError, ValueError) as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        groups.setdefault((pid, metric), []).append((step, value))
    out = []
    for (pid, metric), pairs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        pairs.sort()
        steps = np.array([p[0] for p in pairs], dtype=np.int64)
        values = np.array([p[1] for p in pairs], dtype=np.float64)
        try:
            out.append(MetricSeries(prompt_id=pid, metric=metric, steps=steps, values=values))
        except ValidationError as exc:
            raise FormatError(f"series ({pid}, {metric}): {exc}") from None
    return out


def read_series_file(path) -> list[MetricSeries]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_series_table(fh)


def write_series_file(path, series_list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(emit_series_table(series_list))


# ---------------------------------------------------------------------------
# Prompts (prompts.jsonl) and splits (split.json)

def read_prompts_jsonl(path) -> list[Prompt]:
    prompts = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                prompt = Prompt(id=int(obj["id"]), text=str(obj["text"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if prompt.id in seen:
                raise FormatError(f"{path}:{lineno}: duplicate prompt id {prompt.id}")
            seen.add(prompt.id)
            prompts.append(prompt)
    return prompts


def write_prompts_jsonl(path, prompts: Iterable[Prompt]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in prompts:
            fh.write(json.dumps({"id": p.id, "text": p.text}, sort_keys=True) + "\n")


def read_split_json(path) -> tuple[list[int], list[int]]:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    try:
        train = [int(i) for i in obj["train"]]
        eval_ = [int(i) for i in obj["eval"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad split schema: {exc}") from None
    overlap = set(train) & set(eval_)
    if overlap:
        raise FormatError(f"{path}: ids in both splits: {sorted(overlap)[:5]}")
    return train, eval_


def write_split_json(path, train: Sequence[int], eval_: Sequence[int]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"train": list(train), "eval": list(eval_)}, fh, sort_keys=True)
        fh.write("\n")
