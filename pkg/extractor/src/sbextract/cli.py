"""sbextract: embed | dsim | iclip | generate.

Flag conventions mirror the consumer pipeline's tool: --out/--out-dir
targets, comma-separated lists, exit code 0 on success, 1 on validation
or model errors, 2 on I/O errors. `embed --stdin-jsonl` implements the
child-process bridge: prompt JSON lines on stdin, a BFEM stream on
stdout, nothing else printed.
"""
from __future__ import annotations

import argparse
import sys

from . import __version__
from .embed import embed_prompts, get_embedder
from .formats import (
    ExtractError,
    atomic_write_bytes,
    atomic_write_text,
    encode_embeddings,
    metric_rows,
    parse_prompt_line,
    read_prompts,
    write_sidecar,
)
from .generate import DEFAULT_RESOLUTION, DEFAULT_SEEDS, generate_tree, get_generator
from .scoring import dsim_scores, get_descriptor, get_distance, iclip_scores

PAPER_GRID = (1, 2, 3, 5, 9, 17, 22, 27, 33, 42, 65, 129)


def _parse_int_list(text: str, what: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ExtractError(f"bad {what} list: {text!r}") from None
    if not values:
        raise ExtractError(f"empty {what} list")
    return values


def _cmd_embed(args) -> None:
    embedder = get_embedder(args.backend, dim=args.dim)
    if args.stdin_jsonl:
        prompts = [
            parse_prompt_line(line, where=f"<stdin>:{n}")
            for n, line in enumerate(sys.stdin, start=1)
            if line.strip()
        ]
        records = embed_prompts(prompts, embedder)
        dim = records[0][1].shape[0] if records else embedder.dim
        sys.stdout.buffer.write(encode_embeddings(records, dim))
        sys.stdout.buffer.flush()
        return
    if not args.prompts or not args.out:
        raise ExtractError("embed needs --prompts and --out (or --stdin-jsonl)")
    prompts = read_prompts(args.prompts)
    records = embed_prompts(prompts, embedder)
    dim = records[0][1].shape[0] if records else embedder.dim
    atomic_write_bytes(args.out, encode_embeddings(records, dim))
    write_sidecar(args.out, {
        "kind": "embeddings", "backend": embedder.name, "dim": dim,
        "count": len(records), "normalized": True,
    })


def _cmd_dsim(args) -> None:
    backend = get_distance(args.backend)
    grid = _parse_int_list(args.grid, "grid")
    rows = dsim_scores(args.images, grid, backend)
    atomic_write_text(args.out, metric_rows(rows))
    write_sidecar(args.out, {
        "kind": "metrics", "metric": "DSIM", "backend": backend.name,
        "reference_step": grid[-1],
    })


def _cmd_iclip(args) -> None:
    backend = get_descriptor(args.backend)
    grid = _parse_int_list(args.grid, "grid")
    rows = iclip_scores(args.images, grid, backend)
    atomic_write_text(args.out, metric_rows(rows))
    write_sidecar(args.out, {
        "kind": "metrics", "metric": "ICLIP", "backend": backend.name,
        "reference_step": grid[-1], "value_mapping": "(1+cos)/2",
    })


def _cmd_generate(args) -> None:
    generator = get_generator(args.backend, resolution=args.size)
    prompts = read_prompts(args.prompts)
    grid = _parse_int_list(args.grid, "grid")
    seeds = tuple(_parse_int_list(args.seeds, "seed"))
    count = generate_tree(args.out_dir, prompts, grid, seeds, generator)
    write_sidecar(str(args.out_dir).rstrip("/") + "/tree", {
        "kind": "image-tree", "backend": generator.name, "images": count,
        "grid": grid, "seeds": list(seeds), "resolution": args.size,
    })


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sbextract",
        description="Pretrained-model data extraction for the step-budget pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="prompt text -> BFEM embeddings")
    p.add_argument("--prompts", help="prompts.jsonl input")
    p.add_argument("--out", help="BFEM output path")
    p.add_argument("--stdin-jsonl", action="store_true",
                   help="bridge mode: JSON lines on stdin, BFEM on stdout")
    p.add_argument("--backend", default="hash", help="'hash' or 'clip:<model-id>'")
    p.add_argument("--dim", type=int, default=64,
                   help="vector width for the hash backend")
    p.set_defaults(handler=_cmd_embed)

    default_grid = ",".join(str(s) for s in PAPER_GRID)
    p = sub.add_parser("dsim", help="mid-level distance vs the final-step image")
    p.add_argument("--images", required=True, help="tree of <prompt>/<seed>/<t>.png")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", default=default_grid)
    p.add_argument("--backend", default="pyramid", help="'pyramid' or 'dreamsim'")
    p.set_defaults(handler=_cmd_dsim)

    p = sub.add_parser("iclip", help="semantic similarity vs the final-step image")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", default=default_grid)
    p.add_argument("--backend", default="stats",
                   help="'stats', 'clipimg:<id>' or 'caption:<captioner>:<clip>'")
    p.set_defaults(handler=_cmd_iclip)

    p = sub.add_parser("generate", help="render the (prompt, seed, step) image tree")
    p.add_argument("--prompts", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--grid", default=default_grid)
    p.add_argument("--seeds", default=",".join(str(s) for s in DEFAULT_SEEDS))
    p.add_argument("--size", type=int, default=DEFAULT_RESOLUTION)
    p.add_argument("--backend", default="procedural",
                   help="'procedural' or 'sd:<checkpoint>'")
    p.set_defaults(handler=_cmd_generate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.handler(args)
    except ExtractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
