"""Toy dual-encoder MLPs with hand-written forward and backward passes.

An encoder is a stack of affine layers with tanh between them (none after
the last layer) and an L2 normalization on the output, so every encoder
emits unit-norm embedding rows.  "Taps" expose the raw affine output at
evenly spaced layer boundaries -- before the nonlinearity and before the
output normalization -- which is what intermediate-layer distillation
consumes and what makes a truncated-copy student reproduce its teacher's
prefix exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .container import read_container, write_container
from .exceptions import BadParts, IncompatibleShapes, IoError, ShapeMismatch
from .losses import EmbeddingBatch
from .numerics import l2_normalize_rows
from .validation import as_matrix

ROLES = ("text_teacher", "image_teacher", "text_student", "image_student")


@dataclass(frozen=True)
class EncoderSpec:
    """Architecture of one encoder tower."""

    input_dim: int
    hidden_dim: int
    num_layers: int
    output_dim: int

    def __post_init__(self) -> None:
        for name in ("input_dim", "hidden_dim", "num_layers", "output_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per layer, first to last."""
        shapes = []
        for k in range(self.num_layers):
            fan_in = self.input_dim if k == 0 else self.hidden_dim
            fan_out = self.output_dim if k == self.num_layers - 1 else self.hidden_dim
            shapes.append((fan_in, fan_out))
        return shapes

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "num_layers": self.num_layers,
            "output_dim": self.output_dim,
        }


@dataclass
class EncoderParams:
    """Weights and biases per layer plus a freeze flag.

    Frozen encoders produce detached embeddings and are never stepped by
    the optimizer.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    frozen: bool = False

    def copy(self, frozen: bool | None = None) -> "EncoderParams":
        return EncoderParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            frozen=self.frozen if frozen is None else frozen,
        )


@dataclass
class Encoder:
    """One tower: an architecture plus its parameters."""

    spec: EncoderSpec
    params: EncoderParams


def init_encoder(spec: EncoderSpec, rng: np.random.Generator, frozen: bool = False) -> EncoderParams:
    """Fresh parameters, uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    weights, biases = [], []
    for fan_in, fan_out in spec.layer_shapes():
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return EncoderParams(weights=weights, biases=biases, frozen=frozen)


def init_student_from_teacher(
    teacher: Encoder,
    student_spec: EncoderSpec,
) -> EncoderParams:
    """Initialize a shallower student as a bit-copy of the teacher's first layers.

    Every student layer must have exactly the shape of the teacher layer at
    the same depth, otherwise the copy cannot be exact.

    Raises:
        IncompatibleShapes: naming the first layer whose shape differs.
    """
    t_shapes = teacher.spec.layer_shapes()
    s_shapes = student_spec.layer_shapes()
    if len(s_shapes) > len(t_shapes):
        raise IncompatibleShapes(
            f"student has {len(s_shapes)} layers but the teacher only {len(t_shapes)}"
        )
    for k, (s_shape, t_shape) in enumerate(zip(s_shapes, t_shapes)):
        if s_shape != t_shape:
            raise IncompatibleShapes(
                f"layer {k}: student needs shape {s_shape} but teacher layer has {t_shape}"
            )
    return EncoderParams(
        weights=[teacher.params.weights[k].copy() for k in range(len(s_shapes))],
        biases=[teacher.params.biases[k].copy() for k in range(len(s_shapes))],
        frozen=False,
    )


def _run_layers(params: EncoderParams, spec: EncoderSpec, x: np.ndarray):
    """Forward pass returning per-layer inputs and pre-activations.

    hs[k] is the input to layer k (hs[0] is x); zs[k] is layer k's affine
    output.  The network output before normalization is zs[-1]: tanh is
    applied between layers, never after the last one.
    """
    hs = [x]
    zs = []
    h = x
    for k in range(spec.num_layers):
        z = h @ params.weights[k] + params.biases[k]
        zs.append(z)
        if k < spec.num_layers - 1:
            h = np.tanh(z)
            hs.append(h)
    return zs, hs


def _check_input(spec: EncoderSpec, inputs) -> np.ndarray:
    x = as_matrix(inputs, "encoder input")
    if x.shape[1] != spec.input_dim:
        raise ShapeMismatch(f"input has {x.shape[1]} columns, encoder expects {spec.input_dim}")
    return x


def tap_boundaries(num_layers: int, parts: int) -> list[int]:
    """0-indexed layers whose affine output is tapped, one per part.

    Part j of ``parts`` ends after layer ceil(j * num_layers / parts); the
    last boundary is always the final layer.
    """
    if not (1 <= parts <= num_layers):
        raise BadParts(f"parts must be in [1, {num_layers}], got {parts}")
    return [math.ceil(j * num_layers / parts) - 1 for j in range(1, parts + 1)]


def forward(params: EncoderParams, spec: EncoderSpec, inputs, detached: bool | None = None) -> EmbeddingBatch:
    """Encode input rows to unit-norm embeddings.

    ``detached`` defaults to the encoder's freeze flag, so frozen teachers
    emit constant batches.
    """
    x = _check_input(spec, inputs)
    zs, _ = _run_layers(params, spec, x)
    if detached is None:
        detached = params.frozen
    return EmbeddingBatch(l2_normalize_rows(zs[-1]), detached=detached)


def forward_with_taps(
    params: EncoderParams,
    spec: EncoderSpec,
    inputs,
    parts: int,
    detached: bool | None = None,
) -> tuple[EmbeddingBatch, list[np.ndarray]]:
    """Like :func:`forward` but also return the tap activations.

    With ``parts == 1`` the single tap is the final pre-normalization
    activation; with ``parts == num_layers`` there is one tap per layer.
    """
    x = _check_input(spec, inputs)
    zs, _ = _run_layers(params, spec, x)
    if detached is None:
        detached = params.frozen
    taps = [zs[b].copy() for b in tap_boundaries(spec.num_layers, parts)]
    return EmbeddingBatch(l2_normalize_rows(zs[-1]), detached=detached), taps


@dataclass
class EncoderGrads:
    """Parameter and input gradients produced by :func:`backward`."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray = field(default=None)  # type: ignore[assignment]


def backward(
    params: EncoderParams,
    spec: EncoderSpec,
    inputs,
    grad_output: np.ndarray,
    tap_grads: dict[int, np.ndarray] | None = None,
) -> EncoderGrads:
    """Reverse-mode gradients for a forward pass.

    Args:
        grad_output: dL/d(normalized embedding), shape (N, output_dim).
        tap_grads: optional {0-indexed layer: dL/d(tap)} contributions for
            losses attached to tap activations (which are pre-nonlinearity,
            pre-normalization affine outputs).

    Returns:
        Gradients for every weight, bias, and the input rows.
    """
    x = _check_input(spec, inputs)
    zs, hs = _run_layers(params, spec, x)
    taps = dict(tap_grads or {})
    n_layers = spec.num_layers

    # Backward through y = z / ||z||:  g_z = (g_y - (g_y . y) y) / ||z||.
    z_last = zs[-1]
    norms = np.linalg.norm(z_last, axis=1, keepdims=True)
    y = z_last / norms
    g = np.asarray(grad_output, dtype=np.float64)
    if g.shape != z_last.shape:
        raise ShapeMismatch(f"grad_output shape {g.shape} != output shape {z_last.shape}")
    g = (g - np.sum(g * y, axis=1, keepdims=True) * y) / norms
    if n_layers - 1 in taps:
        g = g + taps.pop(n_layers - 1)

    g_weights: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    g_biases: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for k in range(n_layers - 1, -1, -1):
        g_weights[k] = hs[k].T @ g
        g_biases[k] = g.sum(axis=0)
        g_h = g @ params.weights[k].T
        if k == 0:
            g_input = g_h
        else:
            # hs[k] = tanh(zs[k-1]), so tanh' = 1 - hs[k]^2.
            g = g_h * (1.0 - hs[k] * hs[k])
            if k - 1 in taps:
                g = g + taps.pop(k - 1)
    if taps:
        raise BadParts(f"tap gradients given for layers {sorted(taps)} outside [0, {n_layers - 1}]")
    return EncoderGrads(weights=g_weights, biases=g_biases, inputs=g_input)


@dataclass
class DualEncoderBundle:
    """Up to four towers; all present towers share one embedding dim."""

    text_teacher: Encoder | None = None
    image_teacher: Encoder | None = None
    text_student: Encoder | None = None
    image_student: Encoder | None = None

    def __post_init__(self) -> None:
        dims = {enc.spec.output_dim for _, enc in self.items()}
        if len(dims) > 1:
            raise ShapeMismatch(f"encoders disagree on output_dim: {sorted(dims)}")

    def items(self) -> list[tuple[str, Encoder]]:
        out = []
        for role in ROLES:
            enc = getattr(self, role)
            if enc is not None:
                out.append((role, enc))
        return out

    def require(self, role: str) -> Encoder:
        enc = getattr(self, role, None)
        if enc is None:
            raise IoError(f"bundle is missing the {role} encoder")
        return enc

    def freeze_teachers(self) -> None:
        for role in ("text_teacher", "image_teacher"):
            enc = getattr(self, role)
            if enc is not None:
                enc.params.frozen = True


def save_checkpoint(path: str, bundle: DualEncoderBundle) -> None:
    """Write all present towers to one container file."""
    roles_meta = []
    blocks: list[tuple[str, np.ndarray]] = []
    for role, enc in bundle.items():
        roles_meta.append({"role": role, "spec": enc.spec.to_dict(), "frozen": enc.params.frozen})
        for k in range(enc.spec.num_layers):
            blocks.append((f"{role}/W{k}", enc.params.weights[k]))
            blocks.append((f"{role}/b{k}", enc.params.biases[k]))
    write_container(path, {"kind": "checkpoint", "version": 1, "roles": roles_meta}, blocks)


def load_checkpoint(path: str) -> DualEncoderBundle:
    """Read a checkpoint, restoring specs, parameters, and freeze flags."""
    header, blocks = read_container(path, expected_kind="checkpoint")
    kwargs: dict[str, Encoder] = {}
    for meta in header.get("roles", []):
        role = meta.get("role")
        if role not in ROLES:
            raise IoError(f"{path} names unknown role {role!r}")
        spec = EncoderSpec(**meta["spec"])
        weights, biases = [], []
        for k, (fan_in, fan_out) in enumerate(spec.layer_shapes()):
            try:
                w = blocks[f"{role}/W{k}"]
                b = blocks[f"{role}/b{k}"]
            except KeyError as exc:
                raise IoError(f"{path} is missing parameter block {exc} for {role}") from exc
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise IoError(
                    f"{path}: {role} layer {k} blocks have shapes {w.shape}/{b.shape}, "
                    f"spec requires {(fan_in, fan_out)}/{(fan_out,)}"
                )
            weights.append(w)
            biases.append(b)
        kwargs[role] = Encoder(spec, EncoderParams(weights, biases, frozen=bool(meta.get("frozen", False))))
    return DualEncoderBundle(**kwargs)
