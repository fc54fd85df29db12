"""Emitters for the pipeline's file formats, plus image-tree discovery.

The formats mirror the consumer side exactly: BFEM embedding blobs
(magic "BFEM", version u32, count u32, dim u32, then [id u64][dim x
f32]), metric tables (`prompt_id,seed,timestep,metric,value`), and
prompt lists as JSON lines. Outputs are written atomically (temp file +
rename) and each file gets a `<name>.meta.json` sidecar recording the
backend and any value mapping, since the formats themselves have no
metadata slots.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

BFEM_MAGIC = b"BFEM"
BFEM_VERSION = 1
METRICS_HEADER = "prompt_id,seed,timestep,metric,value"


class ExtractError(ValueError):
    """Bad input, unknown backend, or an unavailable model."""


def encode_embeddings(records: Sequence[tuple[int, np.ndarray]], dim: int) -> bytes:
    out = [struct.pack("<4sIII", BFEM_MAGIC, BFEM_VERSION, len(records), dim)]
    for rec_id, vec in records:
        vec32 = np.ascontiguousarray(vec, dtype="<f4")
        if vec32.shape != (dim,):
            raise ExtractError(f"record {rec_id}: expected {dim} values, got {vec32.shape}")
        if not np.all(np.isfinite(vec32)):
            raise ExtractError(f"record {rec_id}: non-finite embedding")
        out.append(struct.pack("<Q", rec_id))
        out.append(vec32.tobytes())
    return b"".join(out)


def metric_rows(samples: Iterable[tuple[int, int, int, str, float]]) -> str:
    lines = [METRICS_HEADER]
    for prompt_id, seed, timestep, metric, value in samples:
        if not 0.0 <= value <= 1.0:
            raise ExtractError(
                f"({prompt_id},{seed},{timestep},{metric}): value {value} outside [0, 1]"
            )
        lines.append(f"{prompt_id},{seed},{timestep},{metric},{value!r}")
    return "\n".join(lines) + "\n"


def read_prompts(path) -> list[tuple[int, str]]:
    prompts = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            prompts.append(parse_prompt_line(line, where=f"{path}:{lineno}"))
            pid = prompts[-1][0]
            if pid in seen:
                raise ExtractError(f"{path}:{lineno}: duplicate prompt id {pid}")
            seen.add(pid)
    return prompts


def parse_prompt_line(line: str, where: str = "<stdin>") -> tuple[int, str]:
    try:
        obj = json.loads(line)
        pid = int(obj["id"])
        text = str(obj["text"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ExtractError(f"{where}: bad prompt line: {exc}") from None
    if pid < 0 or pid >= 2**64:
        raise ExtractError(f"{where}: id must be u64")
    if not text.strip():
        raise ExtractError(f"{where}: empty prompt text")
    return pid, text


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_sidecar(path, meta: dict) -> None:
    atomic_write_text(str(path) + ".meta.json",
                      json.dumps(meta, sort_keys=True, indent=1) + "\n")


def scan_image_tree(root) -> list[tuple[int, int, int, Path]]:
    """Discover <prompt_id>/<seed>/<t>.png leaves, sorted."""
    root = Path(root)
    entries = []
    for png in root.glob("*/*/*.png"):
        try:
            entries.append((int(png.parent.parent.name), int(png.parent.name),
                            int(png.stem), png))
        except ValueError:
            raise ExtractError(f"unexpected path in image tree: {png}") from None
    if not entries:
        raise ExtractError(f"no <prompt>/<seed>/<t>.png images under {root}")
    return sorted(entries)
