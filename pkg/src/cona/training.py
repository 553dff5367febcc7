"""Training loops: contrastive teacher pretraining and student distillation.

Both phases share one mini-batch engine: shuffle with a seeded generator,
walk the batches, evaluate a grid configuration on the four embedding
batches, backpropagate through the trainable towers, and take one AdamW
step per batch under a warmup + cosine schedule.  The held-out slice (the
last fraction of pairs) is scored with retrieval recall after every epoch.

All metric records are plain dicts so runs serialize to newline-delimited
JSON; records never contain wall-clock values, which keeps two identical
seeded runs byte-identical.
"""

from __future__ import annotations

import json
import os
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import grid
from .data import SyntheticDataset, pair_ids
from .encoders import (
    DualEncoderBundle,
    Encoder,
    backward,
    forward,
    forward_with_taps,
    tap_boundaries,
)
from .exceptions import BadParts, ConaError
from .losses import DEFAULT_TAU, EmbeddingBatch, feature_distance
from .numerics import l2_normalize_rows
from .optim import ScheduleSpec, adamw_step, init_adam, lr_at
from .retrieval import build_index, recall_at_k


@dataclass
class TrainConfig:
    """Optimization knobs shared by pretraining and distillation."""

    epochs: int = 5
    batch_size: int = 256
    peak_lr: float = 3e-4
    weight_decay: float = 0.1
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    warmup_frac: float = 0.05
    holdout_frac: float = 0.1
    eval_ks: tuple[int, ...] = (1, 5, 10)
    tap_parts: int = 0
    tap_weight: float = 1.0
    seed: int = 0
    deterministic: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0.0 <= self.warmup_frac <= 1.0):
            raise ValueError(f"warmup_frac must be in [0, 1], got {self.warmup_frac}")


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def _params_of(enc: Encoder) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for w, b in zip(enc.params.weights, enc.params.biases):
        out.append(w)
        out.append(b)
    return out


def _write_back(enc: Encoder, flat: list[np.ndarray]) -> None:
    n = enc.spec.num_layers
    enc.params.weights = [flat[2 * k] for k in range(n)]
    enc.params.biases = [flat[2 * k + 1] for k in range(n)]


def _grads_of(g) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for w, b in zip(g.weights, g.biases):
        out.append(w)
        out.append(b)
    return out


def _normalize_backward(grad_y: np.ndarray, raw: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    y = raw / norms
    return (grad_y - np.sum(grad_y * y, axis=1, keepdims=True) * y) / norms


def write_metrics(path: str, records: list[dict]) -> None:
    """Write metric records as newline-delimited JSON, atomically.

    Keys are sorted and floats use their shortest round-trip form, so the
    same records always produce the same bytes.
    """
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")
    os.replace(tmp, path)


def read_metrics(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def make_schedule(config: TrainConfig, steps_per_epoch: int) -> ScheduleSpec:
    total = config.epochs * steps_per_epoch
    warmup = int(round(config.warmup_frac * total))
    return ScheduleSpec(total_steps=total, warmup_steps=min(warmup, total), peak_lr=config.peak_lr)


def evaluate_recall(
    bundle: DualEncoderBundle,
    dataset: SyntheticDataset,
    role: str = "student",
    ks: tuple[int, ...] = (1, 5, 10),
    split: str = "val",
    holdout_frac: float = 0.1,
) -> dict[str, dict[int, float]]:
    """Recall@k in both retrieval directions for one encoder pair.

    ``split`` picks which pairs act as queries and gallery: the held-out
    tail ("val"), the training head ("train"), or everything ("all").
    """
    if role not in ("student", "teacher"):
        raise ValueError(f"role must be student or teacher, got {role!r}")
    if split == "val":
        _, part = dataset.split(holdout_frac)
    elif split == "train":
        part, _ = dataset.split(holdout_frac)
    elif split == "all":
        part = dataset
    else:
        raise ValueError(f"split must be val, train, or all, got {split!r}")
    if part.num_pairs == 0:
        raise ValueError(f"split {split!r} holds no pairs")
    text_enc = bundle.require(f"text_{role}")
    image_enc = bundle.require(f"image_{role}")
    text_emb = forward(text_enc.params, text_enc.spec, part.text_inputs).matrix
    image_emb = forward(image_enc.params, image_enc.spec, part.image_inputs).matrix
    ids = pair_ids(part.num_pairs)
    out: dict[str, dict[int, float]] = {}
    for name, queries, gallery in (
        ("text_to_image", text_emb, image_emb),
        ("image_to_text", image_emb, text_emb),
    ):
        report = recall_at_k(build_index(ids, gallery), queries, ids, ks)
        out[name] = dict(report.recalls)
    return out


def pretrain_teacher(
    bundle: DualEncoderBundle,
    dataset: SyntheticDataset,
    config: TrainConfig,
    tau: float = DEFAULT_TAU,
) -> list[dict]:
    """Train the two teacher towers with symmetric contrastive alignment.

    The "clip" recipe's prediction slots are bound to the in-training
    teacher embeddings so gradients flow into both towers; afterwards the
    teachers are frozen in place.  Returns the metric records.
    """
    text = bundle.require("text_teacher")
    image = bundle.require("image_teacher")
    if text.params.frozen or image.params.frozen:
        raise ConaError("teachers must be unfrozen for pretraining")
    cfg = grid.recipe("clip", tau=tau)
    train, _ = dataset.split(config.holdout_frac)
    metrics: list[dict] = []

    shuffle_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    steps_per_epoch = -(-train.num_pairs // config.batch_size)
    schedule = make_schedule(config, steps_per_epoch)
    params = _params_of(text) + _params_of(image)
    state = init_adam(params, config.betas, config.eps, config.weight_decay)

    limit = threadpool_limits(limits=1) if config.deterministic else nullcontext()
    with limit:
        step = 0
        for epoch in range(config.epochs):
            for idx in _batches(train.num_pairs, config.batch_size, shuffle_rng):
                x_t = train.text_inputs[idx]
                x_i = train.image_inputs[idx]
                emb_t = forward(text.params, text.spec, x_t, detached=False)
                emb_i = forward(image.params, image.spec, x_i, detached=False)
                loss = grid.evaluate(cfg, emb_t, emb_i, emb_t.detach(), emb_i.detach())
                g_text = backward(text.params, text.spec, x_t, loss.grads["text_student"])
                g_image = backward(image.params, image.spec, x_i, loss.grads["image_student"])
                lr = lr_at(step, schedule)
                params, state = adamw_step(
                    params, _grads_of(g_text) + _grads_of(g_image), state, lr
                )
                n_text = 2 * text.spec.num_layers
                _write_back(text, params[:n_text])
                _write_back(image, params[n_text:])
                metrics.append(
                    {"kind": "step", "phase": "pretrain", "step": step, "epoch": epoch,
                     "lr": lr, "loss": loss.value}
                )
                step += 1
            recalls = evaluate_recall(
                bundle, dataset, role="teacher", ks=config.eval_ks,
                split="val", holdout_frac=config.holdout_frac,
            )
            metrics.append({"kind": "epoch", "phase": "pretrain", "epoch": epoch, "val": recalls})
    bundle.freeze_teachers()
    return metrics


@dataclass
class _TapState:
    """Per-modality tap projections, trained alongside the students."""

    parts: int
    student_bounds: dict[str, list[int]] = field(default_factory=dict)
    teacher_bounds: dict[str, list[int]] = field(default_factory=dict)
    projections: dict[str, list[np.ndarray | None]] = field(default_factory=dict)


def _init_taps(bundle: DualEncoderBundle, parts: int, rng: np.random.Generator) -> _TapState:
    state = _TapState(parts=parts)
    for modality in ("text", "image"):
        student = bundle.require(f"{modality}_student")
        teacher = bundle.require(f"{modality}_teacher")
        if parts > min(student.spec.num_layers, teacher.spec.num_layers):
            raise BadParts(
                f"{parts} parts exceed the {modality} tower depths "
                f"({student.spec.num_layers} student / {teacher.spec.num_layers} teacher layers)"
            )
        s_bounds = tap_boundaries(student.spec.num_layers, parts)
        t_bounds = tap_boundaries(teacher.spec.num_layers, parts)
        s_shapes = student.spec.layer_shapes()
        t_shapes = teacher.spec.layer_shapes()
        projections: list[np.ndarray | None] = []
        for sb, tb in zip(s_bounds, t_bounds):
            s_width = s_shapes[sb][1]
            t_width = t_shapes[tb][1]
            if s_width == t_width:
                projections.append(None)
            else:
                bound = 1.0 / np.sqrt(s_width)
                projections.append(rng.uniform(-bound, bound, size=(s_width, t_width)))
        state.student_bounds[modality] = s_bounds
        state.teacher_bounds[modality] = t_bounds
        state.projections[modality] = projections
    return state


def distill(
    bundle: DualEncoderBundle,
    dataset: SyntheticDataset,
    cona_config: grid.ConaConfig,
    config: TrainConfig,
) -> list[dict]:
    """Train the student towers against frozen teachers.

    Each step evaluates the grid configuration on the four embedding
    batches and, when ``config.tap_parts > 0``, adds a feature-distance
    penalty between L2-normalized tap activations of matching parts
    (student taps pass through a learned projection when widths differ).
    Student parameters are updated in place; teachers are never touched.

    Returns metric records: one per step with per-term components, one per
    epoch with held-out recall in both directions.
    """
    for role in ("text_teacher", "image_teacher"):
        if not bundle.require(role).params.frozen:
            raise ConaError(f"{role} must be frozen before distillation")
    text_s = bundle.require("text_student")
    image_s = bundle.require("image_student")
    text_t = bundle.require("text_teacher")
    image_t = bundle.require("image_teacher")

    train, _ = dataset.split(config.holdout_frac)
    ss = np.random.SeedSequence(config.seed)
    shuffle_ss, proj_ss = ss.spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_ss)

    taps = _init_taps(bundle, config.tap_parts, np.random.default_rng(proj_ss)) if config.tap_parts else None

    params = _params_of(text_s) + _params_of(image_s)
    n_text = 2 * text_s.spec.num_layers
    n_student = len(params)
    if taps is not None:
        for modality in ("text", "image"):
            params.extend(p for p in taps.projections[modality] if p is not None)
    state = init_adam(params, config.betas, config.eps, config.weight_decay)

    steps_per_epoch = -(-train.num_pairs // config.batch_size)
    schedule = make_schedule(config, steps_per_epoch)
    metrics: list[dict] = []

    limit = threadpool_limits(limits=1) if (config.deterministic or cona_config.deterministic) else nullcontext()
    with limit:
        step = 0
        for epoch in range(config.epochs):
            for idx in _batches(train.num_pairs, config.batch_size, shuffle_rng):
                x_t = train.text_inputs[idx]
                x_i = train.image_inputs[idx]
                emb_tt = forward(text_t.params, text_t.spec, x_t, detached=True)
                emb_it = forward(image_t.params, image_t.spec, x_i, detached=True)
                tap_grads: dict[str, dict[int, np.ndarray]] = {"text": {}, "image": {}}
                proj_grads: dict[str, list[np.ndarray | None]] = {"text": [], "image": []}
                tap_components: dict[str, float] = {}
                if taps is None:
                    emb_ts = forward(text_s.params, text_s.spec, x_t, detached=False)
                    emb_is = forward(image_s.params, image_s.spec, x_i, detached=False)
                else:
                    emb_ts, taps_ts = forward_with_taps(text_s.params, text_s.spec, x_t, taps.parts, detached=False)
                    emb_is, taps_is = forward_with_taps(image_s.params, image_s.spec, x_i, taps.parts, detached=False)
                    _, taps_tt = forward_with_taps(text_t.params, text_t.spec, x_t, taps.parts)
                    _, taps_it = forward_with_taps(image_t.params, image_t.spec, x_i, taps.parts)
                    student_taps = {"text": taps_ts, "image": taps_is}
                    teacher_taps = {"text": taps_tt, "image": taps_it}
                    for modality in ("text", "image"):
                        for j in range(taps.parts):
                            s_raw = student_taps[modality][j]
                            proj = taps.projections[modality][j]
                            mapped = s_raw @ proj if proj is not None else s_raw
                            t_norm = l2_normalize_rows(teacher_taps[modality][j])
                            part = feature_distance(
                                EmbeddingBatch(l2_normalize_rows(mapped)),
                                EmbeddingBatch(t_norm, detached=True),
                            )
                            key = f"part_{j + 1}"
                            tap_components[key] = tap_components.get(key, 0.0) + config.tap_weight * part.value
                            g_mapped = config.tap_weight * _normalize_backward(part.grads["a"], mapped)
                            if proj is not None:
                                proj_grads[modality].append(s_raw.T @ g_mapped)
                                g_raw = g_mapped @ proj.T
                            else:
                                proj_grads[modality].append(None)
                                g_raw = g_mapped
                            layer = taps.student_bounds[modality][j]
                            existing = tap_grads[modality].get(layer)
                            tap_grads[modality][layer] = g_raw if existing is None else existing + g_raw

                loss = grid.evaluate(cona_config, emb_ts, emb_is, emb_tt, emb_it)
                zero_t = np.zeros_like(emb_ts.matrix)
                zero_i = np.zeros_like(emb_is.matrix)
                g_text = backward(
                    text_s.params, text_s.spec, x_t,
                    loss.grads.get("text_student", zero_t),
                    tap_grads=tap_grads["text"] or None,
                )
                g_image = backward(
                    image_s.params, image_s.spec, x_i,
                    loss.grads.get("image_student", zero_i),
                    tap_grads=tap_grads["image"] or None,
                )
                grads = _grads_of(g_text) + _grads_of(g_image)
                if taps is not None:
                    for modality in ("text", "image"):
                        grads.extend(g for g in proj_grads[modality] if g is not None)
                lr = lr_at(step, schedule)
                params, state = adamw_step(params, grads, state, lr)
                _write_back(text_s, params[:n_text])
                _write_back(image_s, params[n_text:n_student])
                if taps is not None:
                    flat = iter(params[n_student:])
                    for modality in ("text", "image"):
                        taps.projections[modality] = [
                            next(flat) if p is not None else None for p in taps.projections[modality]
                        ]
                total = loss.value + sum(tap_components.values())
                record = {
                    "kind": "step", "phase": "distill", "step": step, "epoch": epoch,
                    "lr": lr, "loss": total, "terms": loss.components or {},
                }
                if tap_components:
                    record["taps"] = tap_components
                metrics.append(record)
                step += 1
            recalls = evaluate_recall(
                bundle, dataset, role="student", ks=config.eval_ks,
                split="val", holdout_frac=config.holdout_frac,
            )
            metrics.append({"kind": "epoch", "phase": "distill", "epoch": epoch, "val": recalls})
    return metrics
