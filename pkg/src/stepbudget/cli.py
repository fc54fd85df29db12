"""Command-line pipeline: grid | dedup | lsnr | dataset | train | predict
| suggest | eval | synth.

A single JSON config document (--config) supplies defaults; flags
override config fields. Exit codes: 0 success, 1 validation/schema
error, 2 I/O error. Every run appends a provenance line (config hash,
seed, version) to a run log; data outputs themselves carry no
timestamps, so re-running with identical inputs is byte-identical.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .budget import DEFAULT_WEIGHTS, PlateauConfig, suggest
from .dataset import (
    DedupConfig,
    GridSpec,
    aggregate_seeds,
    build_timestep_grid,
    dedup_prompts,
    densify_series,
    split_dataset,
)
from .errors import ValidationError
from .evaluation import (
    DEFAULT_REFERENCE_STEP,
    DEFAULT_TFLOPS_PER_STEP,
    evaluate_conditions,
    suggestions_from_series,
    synth_dataset,
)
from .figures import render_report_figures
from .formats import (
    deserialize_embeddings,
    emit_metric_table,
    emit_series_table,
    read_embeddings_file,
    read_metrics_file,
    read_prompts_jsonl,
    read_series_file,
    read_split_json,
    write_embeddings_file,
    write_prompts_jsonl,
    write_series_file,
    write_split_json,
)
from .imagemetrics import LsnrConfig, score_image_file
from .predictor import (
    ModelConfig,
    TrainingExample,
    load_checkpoint,
    predict_series,
    save_checkpoint,
    train,
    write_training_log,
)
from .types import (
    DEFAULT_ORIENTATIONS,
    CostModel,
    Metric,
    MetricSample,
    MetricSeries,
    Orientation,
)

log = logging.getLogger("stepbudget")


# ---------------------------------------------------------------------------
# Config handling

class RunConfig:
    """Config document with flag overrides layered on top."""

    def __init__(self, data: dict | None = None):
        self.data = data or {}

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls({})
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"config {path}: invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ValidationError(f"config {path}: top level must be an object")
        return cls(data)

    def section(self, name: str) -> dict:
        value = self.data.get(name, {})
        if not isinstance(value, dict):
            raise ValidationError(f"config section {name!r} must be an object")
        return value

    def hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.data, sort_keys=True).encode("utf-8")
        ).hexdigest()[:16]

    def grid_spec(self, args) -> GridSpec:
        sec = self.section("grid")
        max_i = args.max_i if getattr(args, "max_i", None) is not None else sec.get("max_i", 8)
        if getattr(args, "extras", None) is not None:
            extras = frozenset(int(x) for x in args.extras.split(",") if x.strip())
        else:
            extras = frozenset(sec.get("extras", [22, 27, 42]))
        include_one = sec.get("include_one", True)
        if getattr(args, "include_one", None) is not None:
            include_one = args.include_one
        return GridSpec(max_i=max_i, extras=extras, include_one=include_one)

    def seed(self, args) -> int:
        if getattr(args, "seed", None) is not None:
            return args.seed
        return int(self.data.get("rng_seed", 0))

    def model_config(self, metric: Metric, seed: int, overrides: dict | None = None) -> ModelConfig:
        base = dict(self.section("model"))
        per_metric = self.section("model_overrides").get(metric.value, {})
        merged = {**base, **per_metric, **(overrides or {})}
        merged.setdefault("rng_seed", seed)
        # The semantic-alignment metric needs twice the epochs of the
        # other two under the default recipe.
        if metric is Metric.ICLIP and "epochs" not in merged:
            merged["epochs"] = 50
        if "mlp_dims" in merged:
            merged["mlp_dims"] = tuple(merged["mlp_dims"])
        return ModelConfig(**merged)

    def plateau_config(self) -> PlateauConfig:
        sec = self.section("plateau")
        weights = dict(DEFAULT_WEIGHTS)
        for name, w in sec.get("weights", {}).items():
            weights[Metric.parse(name)] = float(w)
        return PlateauConfig(
            weights=weights,
            use_population_std=bool(sec.get("use_population_std", True)),
            orientations=self.orientations(),
        )

    def orientations(self) -> dict[Metric, Orientation]:
        out = dict(DEFAULT_ORIENTATIONS)
        for name, flag in self.section("orientations").items():
            if flag not in ("up", "down"):
                raise ValidationError(f"orientation for {name} must be 'up' or 'down'")
            out[Metric.parse(name)] = Orientation(flag)
        return out

    def cost_model(self) -> CostModel:
        sec = self.section("cost")
        return CostModel(
            tflops_per_step=float(sec.get("tflops_per_step", DEFAULT_TFLOPS_PER_STEP)),
            fixed_overhead_tflops=float(sec.get("fixed_overhead_tflops", 0.0)),
        )

    def reference_step(self, args) -> int:
        if getattr(args, "reference_step", None) is not None:
            return args.reference_step
        return int(self.data.get("reference_step", DEFAULT_REFERENCE_STEP))


def _append_run_log(path, command: str, cfg: RunConfig, seed: int) -> None:
    entry = {
        "command": command,
        "config_hash": cfg.hash(),
        "seed": seed,
        "version": __version__,
        "timestamp": time.time(),
    }
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _write_text(out: str | None, text: str) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Subcommands

def _cmd_grid(args, cfg: RunConfig) -> None:
    grid = build_timestep_grid(cfg.grid_spec(args))
    _write_text(args.out, json.dumps(list(grid.steps)) + "\n")


def _cmd_dedup(args, cfg: RunConfig) -> None:
    records = read_embeddings_file(args.embeddings)
    sec = cfg.section("dedup")
    threshold = args.threshold if args.threshold is not None else sec.get("threshold", 0.75)
    kept = dedup_prompts(records, DedupConfig(threshold=threshold))
    _write_text(args.out, json.dumps(kept) + "\n")
    if args.prompts and args.prompts_out:
        keep = set(kept)
        prompts = [p for p in read_prompts_jsonl(args.prompts) if p.id in keep]
        write_prompts_jsonl(args.prompts_out, prompts)
    log.info("kept %d of %d embeddings at threshold %.3f", len(kept), len(records), threshold)


def _scan_image_tree(root: Path) -> list[tuple[int, int, int, Path]]:
    """images/<prompt_id>/<seed>/<t>.png, sorted by (prompt, seed, t)."""
    entries = []
    for png in root.glob("*/*/*.png"):
        try:
            pid = int(png.parent.parent.name)
            seed = int(png.parent.name)
            step = int(png.stem)
        except ValueError:
            raise ValidationError(f"unexpected path under image tree: {png}") from None
        entries.append((pid, seed, step, png))
    if not entries:
        raise ValidationError(f"no <prompt>/<seed>/<t>.png files under {root}")
    return sorted(entries)


def _cmd_lsnr(args, cfg: RunConfig) -> None:
    sec = cfg.section("lsnr")
    lsnr_cfg = LsnrConfig(
        sigma=args.sigma if args.sigma is not None else sec.get("sigma", 1.0),
        kernel_radius=args.radius if args.radius is not None else sec.get("kernel_radius", 3),
        snr_db_ceiling=args.ceiling if args.ceiling is not None else sec.get("snr_db_ceiling", 30.0),
    )
    if args.images:
        entries = _scan_image_tree(Path(args.images))
        threads = max(1, args.threads)

        def score(entry):
            pid, seed, step, path = entry
            return MetricSample(pid, seed, step, Metric.LSNR, score_image_file(path, lsnr_cfg))

        if threads == 1:
            samples = [score(e) for e in entries]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                samples = list(pool.map(score, entries))
        _write_text(args.out, emit_metric_table(samples))
    elif args.files:
        lines = [f"{path},{score_image_file(path, lsnr_cfg)!r}" for path in args.files]
        _write_text(args.out, "\n".join(lines) + "\n")
    else:
        raise ValidationError("lsnr requires --images DIR or --files PNG...")


def _cmd_dataset(args, cfg: RunConfig) -> None:
    grid = build_timestep_grid(cfg.grid_spec(args))
    samples = read_metrics_file(args.metrics)
    sparse = aggregate_seeds(samples, grid)
    dense = [densify_series(s) for s in sparse]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_series_file(out_dir / "series.csv", dense)

    prompt_ids = sorted({s.prompt_id for s in dense})
    seed = cfg.seed(args)
    train_ids, eval_ids = split_dataset(prompt_ids, args.split_fraction, seed)
    write_split_json(out_dir / "split.json", train_ids, eval_ids)
    log.info("dataset: %d prompts -> %d train / %d eval", len(prompt_ids),
             len(train_ids), len(eval_ids))


def _series_by_metric_prompt(series_list) -> dict[Metric, dict[int, MetricSeries]]:
    out: dict[Metric, dict[int, MetricSeries]] = {}
    for s in series_list:
        out.setdefault(s.metric, {})[s.prompt_id] = s
    return out


def _training_examples(series_list, embeddings, metric: Metric) -> list[TrainingExample]:
    emb_by_id = dict(embeddings)
    examples = []
    for s in series_list:
        if s.metric != metric:
            continue
        if not s.dense:
            raise ValidationError(f"prompt {s.prompt_id}: training series must be dense")
        if s.prompt_id not in emb_by_id:
            raise ValidationError(f"prompt {s.prompt_id}: no embedding present")
        examples.append(TrainingExample(
            prompt_id=s.prompt_id,
            prompt_embedding=emb_by_id[s.prompt_id],
            metric=metric,
            targets=s.values,
        ))
    return examples


def _cmd_train(args, cfg: RunConfig) -> None:
    series_list = read_series_file(args.series)
    embeddings = read_embeddings_file(args.embeddings)
    split = read_split_json(args.split)
    grid = build_timestep_grid(cfg.grid_spec(args))
    seed = cfg.seed(args)

    metrics = list(Metric) if args.metric == "all" else [Metric.parse(args.metric)]
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    out_dir = Path(args.out_dir)
    for metric in metrics:
        examples = _training_examples(series_list, embeddings, metric)
        if not examples:
            raise ValidationError(f"no dense series for metric {metric.value}")
        model_cfg = cfg.model_config(metric, seed, overrides)
        ckpt = train(model_cfg, examples, split, grid)
        ckpt_dir = out_dir / metric.value
        save_checkpoint(ckpt, ckpt_dir)
        write_training_log(ckpt_dir / "training_log.csv", ckpt.trace)
        final = ckpt.trace[-1]
        log.info("trained %s: train_loss=%.5f val_mae=%.5f",
                 metric.value, final.train_loss, final.val_mae)


def _load_checkpoints(directory) -> dict[Metric, object]:
    directory = Path(directory)
    out = {}
    for metric in Metric:
        ckpt_dir = directory / metric.value
        if (ckpt_dir / "manifest.json").exists():
            out[metric] = load_checkpoint(ckpt_dir)
    if not out:
        raise ValidationError(f"no checkpoints under {directory}")
    return out


def _cmd_predict(args, cfg: RunConfig) -> None:
    ckpts = _load_checkpoints(args.checkpoints)
    embeddings = _resolve_embeddings(args)
    metrics = list(ckpts) if args.metric == "all" else [Metric.parse(args.metric)]
    threads = max(1, args.threads)

    def predict_one(item):
        pid, vec = item
        return [
            predict_series(ckpts[m], vec, m, prompt_id=pid)
            for m in metrics
            if m in ckpts
        ]

    if threads == 1:
        nested = [predict_one(item) for item in embeddings]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            nested = list(pool.map(predict_one, embeddings))
    series = [s for group in nested for s in group]
    _write_text(args.out, emit_series_table(series))


def _resolve_embeddings(args):
    """Embeddings from a BFEM file, or from prompt text via the extractor
    child process (`<extractor> embed --stdin-jsonl` -> BFEM on stdout)."""
    if getattr(args, "prompt_embedding", None):
        return read_embeddings_file(args.prompt_embedding)
    if getattr(args, "prompt_text", None):
        extractor = getattr(args, "extractor", None) or os.environ.get("STEPBUDGET_EXTRACTOR")
        if not extractor:
            raise ValidationError(
                "--prompt-text needs --extractor BIN (or STEPBUDGET_EXTRACTOR) "
                "to embed raw text"
            )
        payload = json.dumps({"id": 0, "text": args.prompt_text}) + "\n"
        proc = subprocess.run(
            [extractor, "embed", "--stdin-jsonl"],
            input=payload.encode("utf-8"), stdout=subprocess.PIPE, check=False,
        )
        if proc.returncode != 0:
            raise ValidationError(f"extractor exited with {proc.returncode}")
        return deserialize_embeddings(proc.stdout)
    raise ValidationError("need --prompt-embedding FILE or --prompt-text TEXT")


def _cmd_suggest(args, cfg: RunConfig) -> None:
    ckpts = _load_checkpoints(args.checkpoints)
    missing = [m.value for m in Metric if m not in ckpts]
    if missing:
        raise ValidationError(f"suggest needs all three checkpoints; missing {missing}")
    embeddings = _resolve_embeddings(args)
    plateau_cfg = cfg.plateau_config()

    grid = next(iter(ckpts.values())).grid
    suggestions = []
    for pid, vec in embeddings:
        series = {m: predict_series(ckpts[m], vec, m, prompt_id=pid) for m in Metric}
        suggestions.append(suggest(series, plateau_cfg, grid=grid).to_dict())
    payload = suggestions[0] if len(suggestions) == 1 else suggestions
    _write_text(args.out, _dump_json(payload))


def _cmd_synth(args, cfg: RunConfig) -> None:
    grid = build_timestep_grid(cfg.grid_spec(args))
    seed = cfg.seed(args)
    data = synth_dataset(
        args.n, grid, seed, dim=args.dim,
        orientations=cfg.orientations(),
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_prompts_jsonl(out_dir / "prompts.jsonl", data.prompts)
    write_embeddings_file(out_dir / "embeddings.bfem", data.embeddings)
    all_series = [
        data.series[m][pid] for m in Metric for pid in sorted(data.series[m])
    ]
    write_series_file(out_dir / "series.csv", all_series)
    train_ids, eval_ids = split_dataset(
        [p.id for p in data.prompts], args.split_fraction, seed
    )
    write_split_json(out_dir / "split.json", train_ids, eval_ids)
    truth = {
        m.value: {
            str(pid): {"start": p.start, "end": p.end, "tau": p.tau}
            for pid, p in sorted(data.curve_params[m].items())
        }
        for m in Metric
    }
    _write_text(str(out_dir / "truth.json"), _dump_json(truth))


def _cmd_eval(args, cfg: RunConfig) -> None:
    series_list = read_series_file(args.series)
    truth = _series_by_metric_prompt(series_list)
    grid = build_timestep_grid(cfg.grid_spec(args))
    prompt_ids = sorted({s.prompt_id for s in series_list})
    if args.split:
        train_ids, eval_ids = read_split_json(args.split)
        wanted = eval_ids if args.split_side == "eval" else train_ids
        prompt_ids = [pid for pid in prompt_ids if pid in set(wanted)]
        if not prompt_ids:
            raise ValidationError(f"split side {args.split_side!r} matches no prompts")

    plateau_cfg = cfg.plateau_config()
    suggestion_source = "truth-series"
    if args.checkpoints:
        ckpts = _load_checkpoints(args.checkpoints)
        emb = dict(read_embeddings_file(args.embeddings)) if args.embeddings else None
        if emb is None:
            raise ValidationError("--checkpoints needs --embeddings to predict curves")
        per_prompt = {}
        for pid in prompt_ids:
            if pid not in emb:
                raise ValidationError(f"prompt {pid}: no embedding for prediction")
            per_prompt[pid] = {
                m: predict_series(ckpts[m], emb[pid], m, prompt_id=pid) for m in Metric
            }
        suggestion_source = "predicted-series"
    else:
        per_prompt = {
            pid: {m: truth[m][pid] for m in Metric} for pid in prompt_ids
        }
    suggestions = suggestions_from_series(per_prompt, plateau_cfg, grid=grid)

    report = evaluate_conditions(
        truth,
        suggestions,
        cfg.cost_model(),
        reference_step=cfg.reference_step(args),
        orientations=cfg.orientations(),
        quality_source=args.quality_source,
    )
    report.summary["suggestion_source"] = suggestion_source

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_text(str(out_dir / "report.json"), _dump_json(report.summary))
    _write_rows_csv(
        out_dir / "efficiency.csv",
        ("prompt_id", "condition", "metric", "steps", "eta_tflops", "quality", "efficiency"),
        report.rows,
    )
    _write_rows_csv(
        out_dir / "relative_quality.csv",
        ("prompt_id", "metric", "ours_step", "uniform_step",
         "ours_quality", "uniform_quality", "relative_quality"),
        report.relative_rows,
    )
    if not args.no_figures:
        render_report_figures(report, out_dir)


def _write_rows_csv(path, columns, rows) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(
            repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in columns
        ))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepbudget",
        description="Perceptual step-budget scheduling for diffusion inference",
    )
    parser.add_argument("--version", action="version", version=__version__)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its fields")
    common.add_argument("--seed", type=int, help="RNG seed override")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads for per-prompt/per-image work")
    common.add_argument("--out", help="output path, '-' for stdout")
    common.add_argument("--run-log", default="stepbudget_runs.jsonl",
                        help="provenance log (timestamps live here, not in outputs)")

    grid_flags = argparse.ArgumentParser(add_help=False)
    grid_flags.add_argument("--max-i", type=int, dest="max_i")
    grid_flags.add_argument("--extras", help="comma-separated extra steps")
    grid_flags.add_argument("--include-one", dest="include_one",
                            action=argparse.BooleanOptionalAction, default=None)

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("grid", parents=[common, grid_flags],
                       help="print the sampled timestep grid")
    p.set_defaults(handler=_cmd_grid)

    p = sub.add_parser("dedup", parents=[common], help="near-duplicate prompt pruning")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--prompts")
    p.add_argument("--prompts-out")
    p.set_defaults(handler=_cmd_dedup)

    p = sub.add_parser("lsnr", parents=[common], help="score images for sharpness")
    p.add_argument("--images", help="tree of <prompt_id>/<seed>/<t>.png")
    p.add_argument("--files", nargs="*", help="loose PNG files (path,score output)")
    p.add_argument("--sigma", type=float)
    p.add_argument("--radius", type=int)
    p.add_argument("--ceiling", type=float)
    p.set_defaults(handler=_cmd_lsnr)

    p = sub.add_parser("dataset", parents=[common, grid_flags],
                       help="aggregate seeds, densify, split")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split-fraction", type=float, default=0.9)
    p.set_defaults(handler=_cmd_dataset)

    p = sub.add_parser("train", parents=[common, grid_flags],
                       help="train metric predictors")
    p.add_argument("--series", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--metric", default="all")
    p.add_argument("--epochs", type=int)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict metric curves")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--prompt-embedding")
    p.add_argument("--prompt-text")
    p.add_argument("--extractor")
    p.add_argument("--metric", default="all")
    p.set_defaults(handler=_cmd_predict)

    p = sub.add_parser("suggest", parents=[common], help="suggest step budgets")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--prompt-embedding")
    p.add_argument("--prompt-text")
    p.add_argument("--extractor")
    p.set_defaults(handler=_cmd_suggest)

    p = sub.add_parser("synth", parents=[common, grid_flags],
                       help="generate a synthetic desk-scale dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split-fraction", type=float, default=0.9)
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("eval", parents=[common, grid_flags],
                       help="efficiency report + figures")
    p.add_argument("--series", required=True, help="dense ground-truth series.csv")
    p.add_argument("--split")
    p.add_argument("--split-side", choices=("train", "eval"), default="eval")
    p.add_argument("--checkpoints")
    p.add_argument("--embeddings")
    p.add_argument("--reference-step", type=int, dest="reference_step")
    p.add_argument("--quality-source", default="truth")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=_cmd_eval)

    return parser


def _setup_logging() -> None:
    level_name = os.environ.get("BUDGETFUSION_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        seed = cfg.seed(args)
        args.handler(args, cfg)
        _append_run_log(args.run_log, args.command, cfg, seed)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
