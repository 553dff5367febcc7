"""Command-line interface.

Subcommands cover the whole workflow: ``gen-data`` -> ``train-teacher`` ->
``distill`` (or ``ablate``) -> ``eval`` / ``index`` / ``query``.

Conventions shared by every command:

* ``--config FILE`` supplies option values from a JSON object; explicit
  flags win over the file, which wins over built-in defaults.
* ``--seed`` drives all randomness.  Without it a fresh seed is drawn and
  recorded; ``--deterministic`` refuses to run without an explicit seed
  and caps numeric kernels at one thread.
* The ``CONA_THREADS`` environment variable caps kernel threads.
* A JSON run manifest is written next to the primary output (or to
  ``--manifest``) when the command succeeds.
* Exit codes: 0 success, 2 flag/usage error, 3 data error, 4 numeric
  failure.  Failures print a single JSON line to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from contextlib import nullcontext
from datetime import datetime, timezone

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, grid
from .ablation import format_table, run_ablation
from .data import generate_pairs, load_dataset, pair_ids, save_dataset
from .encoders import load_checkpoint, save_checkpoint, forward
from .estimators import ClipTeacherTrainer, ConaDistiller
from .exceptions import (
    BadParts,
    ConaError,
    DataError,
    MeaninglessCombination,
    NumericError,
    ShapeMismatch,
    UnknownRecipe,
)
from .retrieval import build_index, load_index, save_index, topk
from .training import evaluate_recall, write_metrics

_S = argparse.SUPPRESS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cona",
        description="Dual-encoder distillation over a fully-connected interaction grid.",
    )
    parser.add_argument("--version", action="version", version=f"cona {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=_S, help="JSON file with option values (flags win)")
        p.add_argument("--manifest", default=_S, help="where to write the run manifest")
        p.add_argument("--seed", type=int, default=_S, help="root random seed")
        p.add_argument("--deterministic", action="store_true", default=_S,
                       help="bit-reproducible mode; requires --seed")

    p = sub.add_parser("gen-data", help="generate a synthetic paired dataset")
    p.add_argument("--out", default=_S, help="output dataset file")
    p.add_argument("--pairs", type=int, default=_S)
    p.add_argument("--latent", type=int, default=_S)
    p.add_argument("--noise", type=float, default=_S)
    p.add_argument("--text-dim", type=int, default=_S)
    p.add_argument("--image-dim", type=int, default=_S)
    add_common(p)

    p = sub.add_parser("train-teacher", help="contrastively pretrain and freeze the teacher pair")
    p.add_argument("--data", default=_S)
    p.add_argument("--out", default=_S, help="output checkpoint")
    p.add_argument("--metrics", default=_S, help="optional metrics NDJSON path")
    p.add_argument("--embed-dim", type=int, default=_S)
    p.add_argument("--hidden-dim", type=int, default=_S)
    p.add_argument("--num-layers", type=int, default=_S)
    p.add_argument("--tau", type=float, default=_S)
    p.add_argument("--epochs", type=int, default=_S)
    p.add_argument("--batch-size", type=int, default=_S)
    p.add_argument("--lr", type=float, default=_S, dest="peak_lr")
    p.add_argument("--weight-decay", type=float, default=_S)
    p.add_argument("--warmup-frac", type=float, default=_S)
    p.add_argument("--holdout-frac", type=float, default=_S)
    add_common(p)

    p = sub.add_parser("distill", help="distill student towers against a frozen teacher checkpoint")
    p.add_argument("--data", default=_S)
    p.add_argument("--teacher", default=_S, help="teacher checkpoint")
    p.add_argument("--out", default=_S, help="output checkpoint (all four towers)")
    p.add_argument("--metrics", default=_S, help="metrics NDJSON path (default <out>.metrics.ndjson)")
    p.add_argument("--recipe", default=_S, choices=["clip", "motis", "conaclip"])
    p.add_argument("--terms", default=_S,
                   help="JSON grid configuration: a list of term objects or a full config object")
    p.add_argument("--tau", type=float, default=_S)
    p.add_argument("--student-hidden", type=int, default=_S, dest="student_hidden_dim")
    p.add_argument("--student-layers", type=int, default=_S)
    p.add_argument("--init-from-teacher", action="store_true", default=_S)
    p.add_argument("--tap-parts", type=int, default=_S,
                   help="add intermediate-layer losses on this many part boundaries")
    p.add_argument("--tap-weight", type=float, default=_S)
    p.add_argument("--epochs", type=int, default=_S)
    p.add_argument("--batch-size", type=int, default=_S)
    p.add_argument("--lr", type=float, default=_S, dest="peak_lr")
    p.add_argument("--weight-decay", type=float, default=_S)
    p.add_argument("--warmup-frac", type=float, default=_S)
    p.add_argument("--holdout-frac", type=float, default=_S)
    add_common(p)

    p = sub.add_parser("ablate", help="sweep grid cells and/or recipes, report recall per row")
    p.add_argument("--data", default=_S)
    p.add_argument("--teacher", default=_S)
    p.add_argument("--out", default=_S, help="optional NDJSON results path")
    p.add_argument("--cells", default=_S,
                   help='"all", "none", or comma list like IntraStuStu:SD,InterTchStu:SymKLDiv')
    p.add_argument("--recipes", default=_S, help="comma list of preset recipes to add as rows")
    p.add_argument("--seeds", type=int, default=_S, help="number of distillation seeds per row")
    p.add_argument("--tau", type=float, default=_S)
    p.add_argument("--student-hidden", type=int, default=_S, dest="student_hidden_dim")
    p.add_argument("--student-layers", type=int, default=_S)
    p.add_argument("--init-from-teacher", action="store_true", default=_S)
    p.add_argument("--epochs", type=int, default=_S)
    p.add_argument("--batch-size", type=int, default=_S)
    p.add_argument("--lr", type=float, default=_S, dest="peak_lr")
    p.add_argument("--weight-decay", type=float, default=_S)
    p.add_argument("--warmup-frac", type=float, default=_S)
    p.add_argument("--holdout-frac", type=float, default=_S)
    add_common(p)

    p = sub.add_parser("eval", help="retrieval recall of a checkpoint on a dataset")
    p.add_argument("--checkpoint", default=_S)
    p.add_argument("--data", default=_S)
    p.add_argument("--role", default=_S, choices=["student", "teacher"])
    p.add_argument("--split", default=_S, choices=["val", "train", "all"])
    p.add_argument("--ks", default=_S, help="comma list of recall cutoffs")
    p.add_argument("--holdout-frac", type=float, default=_S)
    p.add_argument("--out", default=_S, help="optional NDJSON report path")
    add_common(p)

    p = sub.add_parser("index", help="encode a gallery and persist a retrieval index")
    p.add_argument("--checkpoint", default=_S)
    p.add_argument("--data", default=_S)
    p.add_argument("--out", default=_S)
    p.add_argument("--role", default=_S, choices=["student", "teacher"])
    p.add_argument("--modality", default=_S, choices=["text", "image"])
    p.add_argument("--split", default=_S, choices=["val", "train", "all"])
    p.add_argument("--holdout-frac", type=float, default=_S)
    add_common(p)

    p = sub.add_parser("query", help="encode one raw input vector and rank it against an index")
    p.add_argument("--index", default=_S)
    p.add_argument("--checkpoint", default=_S)
    p.add_argument("--input", default=_S, help="JSON file holding the raw input vector")
    p.add_argument("--modality", default=_S, choices=["text", "image"])
    p.add_argument("--role", default=_S, choices=["student", "teacher"])
    p.add_argument("-k", "--k", type=int, default=_S)
    add_common(p)

    return parser


DEFAULTS: dict[str, dict] = {
    "gen-data": {
        "out": None, "pairs": 10000, "latent": 16, "noise": 0.1,
        "text_dim": 24, "image_dim": 48,
    },
    "train-teacher": {
        "data": None, "out": None, "metrics": None, "embed_dim": 32, "hidden_dim": 64,
        "num_layers": 6, "tau": 0.07, "epochs": 20, "batch_size": 256, "peak_lr": 3e-4,
        "weight_decay": 0.1, "warmup_frac": 0.05, "holdout_frac": 0.1,
    },
    "distill": {
        "data": None, "teacher": None, "out": None, "metrics": None, "recipe": "conaclip",
        "terms": None, "tau": 0.07, "student_hidden_dim": 64, "student_layers": 2,
        "init_from_teacher": False, "tap_parts": 0, "tap_weight": 1.0, "epochs": 5,
        "batch_size": 256, "peak_lr": 3e-3, "weight_decay": 0.1, "warmup_frac": 0.05,
        "holdout_frac": 0.1,
    },
    "ablate": {
        "data": None, "teacher": None, "out": None, "cells": "all", "recipes": "",
        "seeds": 3, "tau": 0.07, "student_hidden_dim": 64, "student_layers": 2,
        "init_from_teacher": False, "epochs": 5, "batch_size": 256, "peak_lr": 3e-3,
        "weight_decay": 0.1, "warmup_frac": 0.05, "holdout_frac": 0.1,
    },
    "eval": {
        "checkpoint": None, "data": None, "role": "student", "split": "val",
        "ks": "1,5,10", "holdout_frac": 0.1, "out": None,
    },
    "index": {
        "checkpoint": None, "data": None, "out": None, "role": "student",
        "modality": "image", "split": "all", "holdout_frac": 0.1,
    },
    "query": {
        "index": None, "checkpoint": None, "input": None, "modality": "text",
        "role": "student", "k": 5,
    },
}

_META_KEYS = {"command", "config", "manifest", "seed", "deterministic"}
_REQUIRED: dict[str, tuple[str, ...]] = {
    "gen-data": ("out",),
    "train-teacher": ("data", "out"),
    "distill": ("data", "teacher", "out"),
    "ablate": ("data", "teacher"),
    "eval": ("checkpoint", "data"),
    "index": ("checkpoint", "data", "out"),
    "query": ("index", "checkpoint", "input"),
}


class UsageError(ValueError):
    """Semantic flag problem found after parsing; maps to exit code 2."""


def _load_config_file(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return doc


def _merge_options(command: str, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags, with unknown keys rejected."""
    passed = {k: v for k, v in vars(args).items() if k not in ("command",)}
    defaults = dict(DEFAULTS[command])
    merged = dict(defaults)
    merged.update({"seed": None, "deterministic": False, "manifest": None})
    if "config" in passed:
        file_opts = _load_config_file(passed.pop("config"))
        unknown = set(file_opts) - set(merged)
        if unknown:
            raise UsageError(f"config file has unknown options for {command}: {sorted(unknown)}")
        for key, value in file_opts.items():
            base = defaults.get(key)
            if isinstance(base, bool):
                value = bool(value)
            elif isinstance(base, int) and not isinstance(value, bool):
                value = int(value)
            elif isinstance(base, float):
                value = float(value)
            merged[key] = value
    merged.update(passed)
    missing = [k for k in _REQUIRED[command] if not merged.get(k)]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return merged


def _resolve_seed(opts: dict) -> int:
    if opts.get("deterministic") and opts.get("seed") is None:
        raise UsageError("--deterministic requires an explicit --seed")
    if opts.get("seed") is None:
        opts["seed"] = int(np.random.SeedSequence().entropy % (2**31))
    return int(opts["seed"])


def _parse_ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(part) for part in str(text).split(",") if part.strip())
    except ValueError as exc:
        raise UsageError(f"bad --ks value {text!r}: {exc}") from exc
    if not ks or any(k < 1 for k in ks):
        raise UsageError(f"--ks needs positive integers, got {text!r}")
    return ks


def _write_manifest(command: str, opts: dict, outputs: dict[str, str], started: float) -> None:
    path = opts.get("manifest")
    if path is None:
        primary = outputs.get("out")
        if primary is None:
            return
        path = primary + ".manifest.json"
    doc = {
        "command": command,
        "options": {k: v for k, v in opts.items() if k != "manifest"},
        "outputs": outputs,
        "tool": {"name": "cona", "version": __version__},
        "versions": {"python": sys.version.split()[0], "numpy": np.__version__},
        "started_utc": datetime.fromtimestamp(started, tz=timezone.utc).isoformat(),
        "wall_clock_sec": round(time.time() - started, 3),
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _encode_split(checkpoint_path: str, data_path: str, opts: dict):
    """Load checkpoint + dataset and embed one split with one tower pair."""
    bundle = load_checkpoint(checkpoint_path)
    dataset = load_dataset(data_path)
    split = opts.get("split", "all")
    if split == "all":
        part = dataset
    else:
        train, val = dataset.split(opts["holdout_frac"])
        part = val if split == "val" else train
    return bundle, dataset, part


def cmd_gen_data(opts: dict) -> dict[str, str]:
    dataset = generate_pairs(
        num_pairs=opts["pairs"], latent_dim=opts["latent"], noise=opts["noise"],
        seed=opts["seed"], text_dim=opts["text_dim"], image_dim=opts["image_dim"],
    )
    save_dataset(opts["out"], dataset)
    print(json.dumps({"pairs": dataset.num_pairs, "text_dim": opts["text_dim"],
                      "image_dim": opts["image_dim"], "out": opts["out"]}))
    return {"out": opts["out"]}


def cmd_train_teacher(opts: dict) -> dict[str, str]:
    dataset = load_dataset(opts["data"])
    trainer = ClipTeacherTrainer(
        embed_dim=opts["embed_dim"], hidden_dim=opts["hidden_dim"], num_layers=opts["num_layers"],
        tau=opts["tau"], epochs=opts["epochs"], batch_size=opts["batch_size"],
        peak_lr=opts["peak_lr"], weight_decay=opts["weight_decay"],
        warmup_frac=opts["warmup_frac"], holdout_frac=opts["holdout_frac"],
        seed=opts["seed"], deterministic=opts["deterministic"],
    )
    trainer.fit(dataset)
    save_checkpoint(opts["out"], trainer.bundle_)
    outputs = {"out": opts["out"]}
    if opts.get("metrics"):
        write_metrics(opts["metrics"], trainer.metrics_)
        outputs["metrics"] = opts["metrics"]
    epochs = [r for r in trainer.metrics_ if r["kind"] == "epoch"]
    summary = {"checkpoint": opts["out"]}
    if epochs:
        summary["val"] = epochs[-1]["val"]
    print(json.dumps(summary, sort_keys=True))
    return outputs


def _distill_config(opts: dict) -> grid.ConaConfig | None:
    """Resolve --terms JSON into a configuration; None means use --recipe."""
    raw = opts.get("terms")
    if not raw:
        return None
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--terms is not valid JSON: {exc}") from exc
    if isinstance(doc, list):
        doc = {"terms": doc, "tau": opts["tau"], "deterministic": bool(opts.get("deterministic"))}
    try:
        return grid.config_from_json(json.dumps(doc))
    except MeaninglessCombination:
        raise
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_distill(opts: dict) -> dict[str, str]:
    dataset = load_dataset(opts["data"])
    teachers = load_checkpoint(opts["teacher"])
    config = _distill_config(opts)
    distiller = ConaDistiller(
        teachers=teachers, recipe=opts["recipe"], config=config, tau=opts["tau"],
        student_hidden_dim=opts["student_hidden_dim"], student_layers=opts["student_layers"],
        init_from_teacher=opts["init_from_teacher"], tap_parts=opts["tap_parts"],
        tap_weight=opts["tap_weight"], epochs=opts["epochs"], batch_size=opts["batch_size"],
        peak_lr=opts["peak_lr"], weight_decay=opts["weight_decay"],
        warmup_frac=opts["warmup_frac"], holdout_frac=opts["holdout_frac"],
        seed=opts["seed"], deterministic=opts["deterministic"],
    )
    distiller.fit(dataset)
    save_checkpoint(opts["out"], distiller.bundle_)
    metrics_path = opts.get("metrics") or opts["out"] + ".metrics.ndjson"
    write_metrics(metrics_path, distiller.metrics_)
    epochs = [r for r in distiller.metrics_ if r["kind"] == "epoch"]
    summary = {"checkpoint": opts["out"], "metrics": metrics_path}
    if epochs:
        summary["val"] = epochs[-1]["val"]
    print(json.dumps(summary, sort_keys=True))
    return {"out": opts["out"], "metrics": metrics_path}


def _parse_cells(text: str):
    if text == "all":
        return "all"
    if text in ("none", ""):
        return None
    cells = []
    for chunk in text.split(","):
        if ":" not in chunk:
            raise UsageError(f"bad cell {chunk!r}; expected LearningType:Strategy")
        lt, s = chunk.split(":", 1)
        try:
            cells.append((grid.LearningType(lt.strip()), grid.Strategy(s.strip())))
        except ValueError as exc:
            raise UsageError(f"bad cell {chunk!r}: {exc}") from exc
    return cells


def cmd_ablate(opts: dict) -> dict[str, str]:
    dataset = load_dataset(opts["data"])
    teachers = load_checkpoint(opts["teacher"])
    cells = _parse_cells(opts["cells"])
    recipes = tuple(r.strip() for r in opts["recipes"].split(",") if r.strip())
    if opts["seeds"] < 1:
        raise UsageError(f"--seeds must be >= 1, got {opts['seeds']}")
    seeds = tuple(range(opts["seeds"]))
    rows = run_ablation(
        dataset, teachers, cells=cells, recipes=recipes, seeds=seeds, tau=opts["tau"],
        epochs=opts["epochs"], batch_size=opts["batch_size"], peak_lr=opts["peak_lr"],
        weight_decay=opts["weight_decay"], warmup_frac=opts["warmup_frac"],
        holdout_frac=opts["holdout_frac"], student_hidden_dim=opts["student_hidden_dim"],
        student_layers=opts["student_layers"], init_from_teacher=opts["init_from_teacher"],
        deterministic=opts["deterministic"],
    )
    print(format_table(rows))
    outputs = {}
    if opts.get("out"):
        write_metrics(opts["out"], rows)
        outputs["out"] = opts["out"]
    return outputs


def cmd_eval(opts: dict) -> dict[str, str]:
    bundle = load_checkpoint(opts["checkpoint"])
    dataset = load_dataset(opts["data"])
    try:
        recalls = evaluate_recall(
            bundle, dataset, role=opts["role"], ks=_parse_ks(opts["ks"]),
            split=opts["split"], holdout_frac=opts["holdout_frac"],
        )
    except ShapeMismatch as exc:
        raise DataError(f"{opts['data']} does not fit {opts['checkpoint']}: {exc}") from exc
    for direction, values in recalls.items():
        print(json.dumps({"direction": direction,
                          "recalls": {f"recall@{k}": v for k, v in values.items()}},
                         sort_keys=True))
    outputs = {}
    if opts.get("out"):
        records = [
            {"direction": d, "recalls": {str(k): v for k, v in vals.items()}}
            for d, vals in recalls.items()
        ]
        write_metrics(opts["out"], records)
        outputs["out"] = opts["out"]
    return outputs


def cmd_index(opts: dict) -> dict[str, str]:
    bundle, _, part = _encode_split(opts["checkpoint"], opts["data"], opts)
    enc = bundle.require(f"{opts['modality']}_{opts['role']}")
    inputs = part.text_inputs if opts["modality"] == "text" else part.image_inputs
    try:
        emb = forward(enc.params, enc.spec, inputs).matrix
    except ShapeMismatch as exc:
        raise DataError(f"{opts['data']} does not fit {opts['checkpoint']}: {exc}") from exc
    index = build_index(pair_ids(part.num_pairs), emb)
    save_index(opts["out"], index)
    print(json.dumps({"out": opts["out"], "items": index.size, "dim": index.dim}))
    return {"out": opts["out"]}


def cmd_query(opts: dict) -> dict[str, str]:
    index = load_index(opts["index"])
    bundle = load_checkpoint(opts["checkpoint"])
    enc = bundle.require(f"{opts['modality']}_{opts['role']}")
    try:
        with open(opts["input"], encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read input vector {opts['input']}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"input vector {opts['input']} is not valid JSON: {exc}") from exc
    if isinstance(doc, dict):
        doc = doc.get("values")
    values = np.asarray(doc, dtype=np.float64)
    if values.ndim != 1 or values.shape[0] != enc.spec.input_dim:
        raise DataError(
            f"input vector must hold {enc.spec.input_dim} numbers, got shape {values.shape}"
        )
    if opts["k"] < 1:
        raise UsageError(f"-k must be >= 1, got {opts['k']}")
    emb = forward(enc.params, enc.spec, values.reshape(1, -1)).matrix[0]
    for rank, (item_id, score) in enumerate(topk(index, emb, opts["k"]), start=1):
        print(json.dumps({"rank": rank, "id": item_id, "score": score}))
    return {}


_HANDLERS = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
    "index": cmd_index,
    "query": cmd_query,
}


def _fail(exc: Exception) -> int:
    if isinstance(exc, (UsageError, MeaninglessCombination, UnknownRecipe, BadParts)):
        code = 2
    elif isinstance(exc, NumericError):
        code = 4
    elif isinstance(exc, (DataError, ConaError, OSError)):
        code = 3
    elif isinstance(exc, (ValueError, TypeError)):
        code = 2
    else:
        raise exc
    print(json.dumps({"error": type(exc).__name__, "exit_code": code, "message": str(exc)}),
          file=sys.stderr)
    return code


def _thread_limit(deterministic: bool) -> int | None:
    if deterministic:
        return 1
    raw = os.environ.get("CONA_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"CONA_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"CONA_THREADS must be >= 1, got {n}")
    return n


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    started = time.time()
    try:
        opts = _merge_options(args.command, args)
        _resolve_seed(opts)
        limit = _thread_limit(bool(opts.get("deterministic")))
        ctx = threadpool_limits(limits=limit) if limit is not None else nullcontext()
        with ctx:
            outputs = _HANDLERS[args.command](opts)
        _write_manifest(args.command, opts, outputs, started)
    except Exception as exc:  # noqa: BLE001 - single funnel to exit codes
        return _fail(exc)
    return 0


def run() -> None:
    sys.exit(main())
