"""Command-line entry point: ``reversion invert|generate|analyze|evaluate|benchmark``.

Every subcommand takes ``--config FILE`` (JSON); explicit flags override file
values, which override defaults. Errors go to stderr as one JSON object per
line. Exit codes: 0 success, 2 validation error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import importlib
import json
import logging
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import torch

from . import benchmark as bench
from . import checkpoint
from .backbone import DEFAULT_GUIDANCE, generate, parameter_digest
from .embedding_space import (
    DEFAULT_TAU_ACT,
    BasisPrepositionSet,
    activation_profile,
    load_vocabulary,
    pos_cluster_separation,
)
from .errors import ReversionError, ValidationError
from .evaluation import (
    EvaluationReport,
    RelationScore,
    ToyImageTextScorer,
    ToyRelationExtractor,
    emit_report,
    entity_accuracy,
    relation_counts,
    train_relation_classifiers,
)
from .fixtures import write_fixture_benchmark
from .imageio import load_image, save_png
from .inversion import InversionConfig, invert
from .toy import toy_backbone_from_spec

log = logging.getLogger("reversion")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3
CHECKPOINT_NAME = "checkpoint.rvck"


class CLIError(ValidationError):
    pass


def reversion_home() -> Path | None:
    home = os.environ.get("REVERSION_HOME")
    return Path(home) if home else None


def resolve_backbone(spec: str):
    """``toy``, ``toy:<seed>``, ``rigged:<seed>`` or ``package.module:factory``."""
    kind = spec.partition(":")[0]
    if kind in ("toy", "rigged"):
        return toy_backbone_from_spec(spec)
    module, _, attr = spec.partition(":")
    if not attr:
        raise CLIError(f"backbone spec {spec!r} must be 'toy', 'rigged:<seed>' or 'module:factory'")
    return getattr(importlib.import_module(module), attr)()


# -- option tables ---------------------------------------------------------------------
# (key, type, default, help). ``type`` of "list" collects repeated flags.

_INVERSION_HELP = {
    "steps": "optimization steps",
    "learning_rate": "AdamW learning rate",
    "batch_size": "(image, description) pairs per step",
    "lambda_denoise": "weight of the denoising loss",
    "lambda_steer": "weight of the steering loss",
    "temperature": "contrastive temperature",
    "alpha": "skew of the timestep importance density, in (0, 1]",
    "num_positives": "basis prepositions sampled per step (L)",
    "num_negatives": "negatives per step, entity words included (M)",
    "ablation": "ablation mode; repeat for several (no_steering, no_importance_sampling)",
    "init_word": "word whose embedding initializes the relation prompt",
    "weight_decay": "AdamW decoupled weight decay",
    "clip_grad_norm": "clip the gradient to this global norm (off when unset)",
}

COMMON = [("run_dir", str, None, "directory receiving every output of this command")]

OPTIONS = {
    "invert": COMMON
    + [
        ("benchmark", str, None, "benchmark root (defaults to $REVERSION_HOME/benchmark)"),
        ("relation", str, None, "relation id whose exemplars are inverted"),
        ("backbone", str, "toy", "backbone spec: toy, toy:<seed>, rigged:<seed> or module:factory"),
        ("seed", int, 0, "random seed"),
        ("record_loss_curve", bool, True, "store the per-step loss curve in the manifest"),
    ]
    + [
        (k, list if k == "ablation" else type(v) if v is not None else float, v, _INVERSION_HELP[k])
        for k, v in InversionConfig().to_dict().items()
        if k != "seed"
    ],
    "generate": COMMON
    + [
        ("checkpoint", str, None, "relation prompt checkpoint"),
        ("template", str, None, "single prompt containing <R>, e.g. 'cat <R> box'"),
        ("benchmark", str, None, "benchmark root, used with --relation"),
        ("relation", str, None, "generate every inference template of this relation"),
        ("relation_label", str, "custom", "output folder name for --template"),
        ("backbone", str, "toy", "backbone spec"),
        ("samples", int, 10, "images per template"),
        ("guidance", float, DEFAULT_GUIDANCE, "classifier-free guidance weight"),
        ("sampling_steps", int, 50, "denoising steps per image"),
        ("seed", int, 0, "base seed; per-image seeds derive from (seed, template, sample)"),
        ("max_templates", int, None, "only the first N templates"),
        ("workers", int, 1, "template-level worker threads"),
    ],
    "analyze": COMMON
    + [
        ("vocab", str, None, "JSON-lines vocabulary file; omit to read the backbone's vocabulary"),
        ("backbone", str, "toy", "backbone spec used when --vocab is absent"),
        ("checkpoint", str, None, "relation prompt checkpoint to profile against the basis"),
        ("tau", float, DEFAULT_TAU_ACT, "activation threshold for sparsity"),
    ],
    "evaluate": COMMON
    + [
        ("images", str, None, "generated images laid out as <relation_id>/<template_index>/<sample>.png"),
        ("benchmark", str, None, "benchmark root supplying templates and classifier training images"),
        ("relations", list, None, "relations to score (default: every relation folder under --images)"),
        ("backbone", str, "toy", "backbone spec for the toy scorer"),
        ("scorer", str, "toy", "image-text scorer: toy or module:factory"),
        ("extractor", str, "toy", "relation feature extractor: toy or module:factory"),
        ("svm_c", float, 1.0, "SVM regularization constant"),
        ("seed", int, 0, "classifier seed"),
    ],
}

REQUIRED = {
    "invert": ["run_dir", "relation"],
    "generate": ["run_dir", "checkpoint"],
    "analyze": ["run_dir"],
    "evaluate": ["run_dir", "images"],
}


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def _add_options(p: argparse.ArgumentParser, cmd: str):
    p.add_argument("--config", help="JSON file with any of the keys below (flags override it)")
    for key, typ, default, help_ in OPTIONS[cmd]:
        h = f"[{key}] {help_} (default: {default})"
        if typ is bool:
            p.add_argument(_flag(key), dest=key, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS, help=h)
        elif typ is list:
            p.add_argument(_flag(key), dest=key, action="append", default=argparse.SUPPRESS, help=h)
        else:
            p.add_argument(_flag(key), dest=key, type=typ, default=argparse.SUPPRESS, help=h)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reversion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, help_ in (
        ("invert", "learn a relation prompt from a benchmark relation's exemplars"),
        ("generate", "sample images from a learned relation prompt"),
        ("analyze", "POS cluster statistics and basis activation profile"),
        ("evaluate", "entity and relation accuracy over generated images"),
    ):
        _add_options(sub.add_parser(cmd, help=help_, description=help_), cmd)
    bp = sub.add_parser("benchmark", help="benchmark utilities")
    bsub = bp.add_subparsers(dest="benchmark_command", required=True)
    v = bsub.add_parser("validate", help="check a benchmark directory; nonzero exit on any violation")
    v.add_argument("root", nargs="?", help="benchmark root (defaults to $REVERSION_HOME/benchmark)")
    f = bsub.add_parser("make-fixture", help="write the synthetic toy benchmark")
    f.add_argument("root")
    f.add_argument("--seed", type=int, default=0)
    return parser


def resolve_config(cmd: str, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags; unknown file keys are rejected."""
    cfg = {key: default for key, _, default, _ in OPTIONS[cmd]}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CLIError(f"config file {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise CLIError("config file must hold a JSON object")
        unknown = sorted(set(data) - set(cfg))
        if unknown:
            raise CLIError(f"unknown config key(s) for {cmd}: {unknown}")
        cfg.update(data)
    for key in cfg:
        if hasattr(args, key):
            cfg[key] = getattr(args, key)
    if cfg.get("benchmark") is None and "benchmark" in cfg and reversion_home():
        cfg["benchmark"] = str(reversion_home() / "benchmark")
    missing = [k for k in REQUIRED[cmd] if cfg.get(k) is None]
    if missing:
        raise CLIError(f"{cmd}: missing required option(s) {[_flag(k) for k in missing]}")
    return cfg


def _inversion_config(cfg: dict) -> InversionConfig:
    keys = set(InversionConfig().to_dict())
    d = {k: cfg[k] for k in keys if k in cfg}
    d["ablation"] = tuple(cfg.get("ablation") or ())
    return InversionConfig.from_dict(d)


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _require_benchmark(cfg) -> Path:
    if cfg.get("benchmark") is None:
        raise CLIError("--benchmark is required (or set REVERSION_HOME)")
    return Path(cfg["benchmark"])


# -- subcommands -------------------------------------------------------------------------


def cmd_invert(cfg: dict) -> Path:
    config = _inversion_config(cfg)
    root = _require_benchmark(cfg)
    rel = bench.load_relation(root / cfg["relation"]) if (root / cfg["relation"]).is_dir() else None
    if rel is None:
        raise CLIError(f"relation {cfg['relation']!r} not found under {root}")
    backbone = resolve_backbone(cfg["backbone"])
    run_dir = Path(cfg["run_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)

    start = time.perf_counter()
    prompt = invert(rel.exemplars, backbone, config, record_history=cfg["record_loss_curve"])
    elapsed = time.perf_counter() - start
    ckpt = checkpoint.save(prompt, run_dir / CHECKPOINT_NAME)
    manifest = {
        "command": "invert",
        "relation": rel.relation_id,
        "seed": config.seed,
        "config": config.to_dict(),
        "config_digest": config.digest(),
        "backbone": cfg["backbone"],
        "backbone_digest": prompt.backbone_digest,
        "checkpoint": ckpt.name,
        "checkpoint_sha256": checkpoint.file_digest(ckpt),
        "final_loss": prompt.history[-1]["loss"] if prompt.history else None,
        "loss_curve": [
            {"step": r["step"], "loss": r["loss"], "denoise": r["denoise"], "steer": r["steer"]} for r in prompt.history
        ],
        "wall_clock_seconds": elapsed,
    }
    _write_json(run_dir / "manifest.json", manifest)
    return ckpt


def derive_seed(base: int, template_index: int, sample_index: int) -> int:
    return int(np.random.SeedSequence([base, template_index, sample_index]).generate_state(1)[0])


def cmd_generate(cfg: dict) -> list[Path]:
    backbone = resolve_backbone(cfg["backbone"])
    prompt = checkpoint.load(cfg["checkpoint"], backbone_digest=parameter_digest(backbone))
    if cfg["template"] is not None:
        label = cfg["relation_label"]
        templates = [cfg["template"]]
    elif cfg["relation"] is not None:
        rel = bench.load_relation(_require_benchmark(cfg) / cfg["relation"])
        label = rel.relation_id
        templates = [t.rendered for t in rel.inference_templates]
    else:
        raise CLIError("generate needs --template or --relation")
    if cfg["max_templates"] is not None:
        templates = templates[: cfg["max_templates"]]
    if cfg["samples"] < 1 or cfg["workers"] < 1:
        raise CLIError("--samples and --workers must be >= 1")
    prompts = [bench.substitute(t, backbone.placeholder) for t in templates]
    embedding = torch.tensor(prompt.embedding)
    out_root = Path(cfg["run_dir"]) / "images" / label

    def render(ti: int) -> list[Path]:
        paths = []
        for si in range(cfg["samples"]):
            img = generate(
                backbone,
                prompts[ti],
                embedding,
                guidance_weight=cfg["guidance"],
                steps=cfg["sampling_steps"],
                seed=derive_seed(cfg["seed"], ti, si),
            )
            paths.append(save_png(img, out_root / f"{ti:03d}" / f"{si:02d}.png"))
        return paths

    with ThreadPoolExecutor(max_workers=cfg["workers"]) as pool:
        written = [p for batch in pool.map(render, range(len(prompts))) for p in batch]
    _write_json(
        Path(cfg["run_dir"]) / "generate_manifest.json",
        {
            "command": "generate",
            "relation": label,
            "templates": templates,
            "samples": cfg["samples"],
            "guidance": cfg["guidance"],
            "sampling_steps": cfg["sampling_steps"],
            "seed": cfg["seed"],
            "checkpoint_sha256": checkpoint.file_digest(cfg["checkpoint"]),
        },
    )
    return written


def cmd_analyze(cfg: dict) -> Path:
    if cfg["vocab"] is not None:
        vocab = load_vocabulary(cfg["vocab"])
        source = "vocab"
    else:
        vocab = resolve_backbone(cfg["backbone"]).vocabulary()
        source = cfg["backbone"]
    clusters = pos_cluster_separation(vocab)
    report = {"source": source, "clusters": clusters.to_dict()}
    run_dir = Path(cfg["run_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "clusters.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pos", "count", "intra", "inter", "separation"])
        for k, s in clusters.per_class.items():
            w.writerow([k, s.count, repr(s.intra), repr(s.inter), repr(s.separation)])
    if cfg["checkpoint"] is not None:
        prompt = checkpoint.load(cfg["checkpoint"])
        basis = BasisPrepositionSet.from_vocabulary(vocab)
        profile = activation_profile(prompt.embedding, basis, cfg["tau"])
        report["activation_profile"] = profile.to_dict()
        report["nearest_pos_cluster"] = clusters.nearest_class(prompt.embedding)
        with open(run_dir / "activation_profile.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["preposition", "cosine"])
            for word, s in zip(profile.words, profile.scores):
                w.writerow([word, repr(float(s))])
    return _write_json(run_dir / "analysis.json", report)


def _resolve_plugin(spec: str, toy_factory):
    if spec == "toy":
        return toy_factory()
    module, _, attr = spec.partition(":")
    if not attr:
        raise CLIError(f"plugin spec {spec!r} must be 'toy' or 'module:factory'")
    return getattr(importlib.import_module(module), attr)()


def cmd_evaluate(cfg: dict) -> Path:
    images_root = Path(cfg["images"])
    if not images_root.is_dir():
        raise CLIError(f"image directory {images_root} does not exist")
    relations = {r.relation_id: r for r in bench.load_benchmark(_require_benchmark(cfg))}
    present = sorted(p.name for p in images_root.iterdir() if p.is_dir())
    requested = cfg["relations"] or present
    backbone = resolve_backbone(cfg["backbone"])
    scorer = _resolve_plugin(cfg["scorer"], lambda: ToyImageTextScorer(backbone, seed=cfg["seed"]))
    extractor = _resolve_plugin(cfg["extractor"], ToyRelationExtractor)

    labeled = [(load_image(img), rid) for rid, r in relations.items() for img in r.exemplars.images]
    bundle = train_relation_classifiers(labeled, extractor, C=cfg["svm_c"], seed=cfg["seed"])

    report = EvaluationReport(
        config={
            "relations": list(requested),
            "scorer": cfg["scorer"],
            "extractor": cfg["extractor"],
            "backbone": cfg["backbone"],
            "svm_c": cfg["svm_c"],
            "seed": cfg["seed"],
        }
    )
    for rid in requested:
        rel_dir = images_root / rid
        if rid not in relations or not rel_dir.is_dir():
            continue
        weighted, correct, total = 0.0, 0, 0
        for tdir in sorted(p for p in rel_dir.iterdir() if p.is_dir()):
            template = relations[rid].inference_templates[int(tdir.name)]
            imgs = [load_image(p) for p in sorted(tdir.glob("*.png"))]
            if not imgs:
                continue
            weighted += entity_accuracy(imgs, template.entity_a, template.entity_b, scorer) * len(imgs)
            c, n = relation_counts(imgs, rid, bundle, extractor)
            correct += c
            total += n
        if total:
            report.scores[rid] = RelationScore(weighted / total, correct, total)
    json_path, _ = emit_report(report, cfg["run_dir"], relations=requested)
    return json_path


def cmd_benchmark_validate(root) -> int:
    if root is None:
        home = reversion_home()
        if home is None:
            raise CLIError("benchmark root required (or set REVERSION_HOME)")
        root = home / "benchmark"
    problems = bench.validate_benchmark(root)
    for msg in problems:
        _emit_error("InvariantViolation", msg, "benchmark validate")
    if not problems:
        print(json.dumps({"status": "ok", "root": str(root), "relations": len(bench.RELATIONS)}))
    return EXIT_VALIDATION if problems else EXIT_OK


# -- entry point -----------------------------------------------------------------------


def _emit_error(kind: str, message: str, command: str | None):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "command": command}) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    command = args.command
    try:
        if command == "benchmark":
            if args.benchmark_command == "validate":
                return cmd_benchmark_validate(args.root)
            write_fixture_benchmark(args.root, seed=args.seed)
            return EXIT_OK
        cfg = resolve_config(command, args)
        handler = {"invert": cmd_invert, "generate": cmd_generate, "analyze": cmd_analyze, "evaluate": cmd_evaluate}[command]
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            result = handler(cfg)
        print(json.dumps({"status": "ok", "command": command, "output": str(result if not isinstance(result, list) else len(result))}))
        return EXIT_OK
    except (ValidationError, FileNotFoundError, json.JSONDecodeError) as exc:
        _emit_error(type(exc).__name__, str(exc), command)
        return EXIT_VALIDATION
    except (ReversionError, Exception) as exc:  # noqa: BLE001 - structured report for any runtime failure
        _emit_error(type(exc).__name__, str(exc), command)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
