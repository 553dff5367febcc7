"""The fully-connected knowledge-interaction grid.

Supervision terms are cells in a 4 x 6 grid: four learning types (which pair
of encoders interacts, within or across modalities) crossed with six
strategies (which loss shapes the interaction).  Four cells are excluded as
degenerate, leaving twenty valid cells.  A configuration is a weighted list
of cells plus a shared temperature; ``evaluate`` turns one into a scalar
loss with gradients per encoder role.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from .exceptions import MeaninglessCombination, ShapeMismatch, UnknownRecipe
from .losses import (
    DEFAULT_TAU,
    EmbeddingBatch,
    LossValue,
    feature_distance,
    infonce,
    kl_div,
    similarity_distance,
)


class Role(str, Enum):
    """The four encoder roles a loss argument can be wired to."""

    TEXT_STUDENT = "text_student"
    IMAGE_STUDENT = "image_student"
    TEXT_TEACHER = "text_teacher"
    IMAGE_TEACHER = "image_teacher"

    @property
    def is_teacher(self) -> bool:
        return self in (Role.TEXT_TEACHER, Role.IMAGE_TEACHER)


class LearningType(str, Enum):
    INTRA_STU_STU = "IntraStuStu"
    INTER_STU_STU = "InterStuStu"
    INTRA_TCH_STU = "IntraTchStu"
    INTER_TCH_STU = "InterTchStu"


class Strategy(str, Enum):
    INFONCE = "InfoNCE"
    FD = "FD"
    SD = "SD"
    KLDIV = "KLDiv"
    SYM_SD = "SymSD"
    SYM_KLDIV = "SymKLDiv"


# Excluded cells and why they carry no usable training signal.
MEANINGLESS_CELLS: dict[tuple[LearningType, Strategy], str] = {
    (LearningType.INTRA_STU_STU, Strategy.INFONCE): "a batch contrasted against itself is trivially aligned",
    (LearningType.INTRA_STU_STU, Strategy.FD): "a batch compared with itself has zero distance by construction",
    (LearningType.INTER_STU_STU, Strategy.SYM_SD): "swapping modalities reproduces the plain SD cell",
    (LearningType.INTER_STU_STU, Strategy.SYM_KLDIV): "swapping modalities reproduces the plain KLDiv cell",
}

_TS = Role.TEXT_STUDENT
_IS = Role.IMAGE_STUDENT
_TT = Role.TEXT_TEACHER
_IT = Role.IMAGE_TEACHER

# Each cell maps to its summands: (loss kind, argument roles).  Two-element
# tuples feed InfoNCE/FD; four-element tuples feed SD/KL as
# (pred_a, pred_b, tgt_a, tgt_b).  Arrow patterns follow the interaction
# grid row by row.
_WIRING: dict[tuple[LearningType, Strategy], tuple[tuple[str, tuple[Role, ...]], ...]] = {
    (LearningType.INTRA_STU_STU, Strategy.SD): (
        ("sd", (_TS, _TS, _TT, _TT)),
        ("sd", (_IS, _IS, _IT, _IT)),
    ),
    (LearningType.INTRA_STU_STU, Strategy.KLDIV): (
        ("kl", (_TS, _TS, _TT, _TT)),
        ("kl", (_IS, _IS, _IT, _IT)),
    ),
    (LearningType.INTRA_STU_STU, Strategy.SYM_SD): (
        ("sd", (_TS, _TS, _IS, _IS)),
    ),
    (LearningType.INTRA_STU_STU, Strategy.SYM_KLDIV): (
        ("kl", (_TS, _TS, _IS, _IS)),
        ("kl", (_IS, _IS, _TS, _TS)),
    ),
    (LearningType.INTER_STU_STU, Strategy.INFONCE): (
        ("infonce", (_TS, _IS)),
        ("infonce", (_IS, _TS)),
    ),
    (LearningType.INTER_STU_STU, Strategy.FD): (
        ("fd", (_TS, _IS)),
    ),
    (LearningType.INTER_STU_STU, Strategy.SD): (
        ("sd", (_TS, _IS, _TT, _IT)),
        ("sd", (_IS, _TS, _IT, _TT)),
    ),
    (LearningType.INTER_STU_STU, Strategy.KLDIV): (
        ("kl", (_TS, _IS, _TT, _IT)),
        ("kl", (_IS, _TS, _IT, _TT)),
    ),
    (LearningType.INTRA_TCH_STU, Strategy.INFONCE): (
        ("infonce", (_TS, _TT)),
        ("infonce", (_IS, _IT)),
    ),
    (LearningType.INTRA_TCH_STU, Strategy.FD): (
        ("fd", (_TS, _TT)),
        ("fd", (_IS, _IT)),
    ),
    (LearningType.INTRA_TCH_STU, Strategy.SD): (
        ("sd", (_TS, _TT, _TT, _TT)),
        ("sd", (_IS, _IT, _IT, _IT)),
    ),
    (LearningType.INTRA_TCH_STU, Strategy.KLDIV): (
        ("kl", (_TS, _TT, _TT, _TT)),
        ("kl", (_IS, _IT, _IT, _IT)),
    ),
    (LearningType.INTRA_TCH_STU, Strategy.SYM_SD): (
        ("sd", (_TS, _TT, _IS, _IT)),
    ),
    (LearningType.INTRA_TCH_STU, Strategy.SYM_KLDIV): (
        ("kl", (_TS, _TT, _IS, _IT)),
        ("kl", (_IS, _IT, _TS, _TT)),
    ),
    (LearningType.INTER_TCH_STU, Strategy.INFONCE): (
        ("infonce", (_TS, _IT)),
        ("infonce", (_IS, _TT)),
    ),
    (LearningType.INTER_TCH_STU, Strategy.FD): (
        ("fd", (_TS, _IT)),
        ("fd", (_IS, _TT)),
    ),
    (LearningType.INTER_TCH_STU, Strategy.SD): (
        ("sd", (_TS, _IT, _TT, _IT)),
        ("sd", (_IS, _TT, _IT, _TT)),
    ),
    (LearningType.INTER_TCH_STU, Strategy.KLDIV): (
        ("kl", (_TS, _IT, _TT, _IT)),
        ("kl", (_IS, _TT, _IT, _TT)),
    ),
    (LearningType.INTER_TCH_STU, Strategy.SYM_SD): (
        ("sd", (_TS, _IT, _IS, _TT)),
    ),
    (LearningType.INTER_TCH_STU, Strategy.SYM_KLDIV): (
        ("kl", (_TS, _IT, _IS, _TT)),
        ("kl", (_IS, _TT, _TS, _IT)),
    ),
}


@dataclass(frozen=True)
class Summand:
    """One loss invocation inside a term: kind, wired roles, detach flags.

    ``detached`` lines up with ``roles``; a detached slot contributes no
    gradient even when its batch allows one.
    """

    kind: str
    roles: tuple[Role, ...]
    detached: tuple[bool, ...]
    reverse_kl: bool = False

    def label(self) -> str:
        names = [r.value for r in self.roles]
        if self.kind in ("infonce", "fd"):
            return f"{self.kind}({names[0]}, {names[1]})"
        return f"{self.kind}({names[0]}->{names[1]} || {names[2]}->{names[3]})"


@dataclass(frozen=True)
class LossTerm:
    """A weighted grid cell: learning type, strategy, and its wiring."""

    learning_type: LearningType
    strategy: Strategy
    weight: float = 1.0
    summands: tuple[Summand, ...] = ()
    two_sided: bool = False
    reverse_kl: bool = False

    def slots(self) -> list[tuple[Role, bool]]:
        """Ordered (role, detached) argument slots across all summands."""
        out: list[tuple[Role, bool]] = []
        for s in self.summands:
            out.extend(zip(s.roles, s.detached))
        return out


def valid_cells() -> list[tuple[LearningType, Strategy]]:
    """The twenty (learning type, strategy) cells that carry a loss."""
    return [
        (lt, s)
        for lt in LearningType
        for s in Strategy
        if (lt, s) not in MEANINGLESS_CELLS
    ]


def build_term(
    learning_type: LearningType | str,
    strategy: Strategy | str,
    weight: float = 1.0,
    two_sided: bool = False,
    reverse_kl: bool = False,
) -> LossTerm:
    """Construct the loss term for one grid cell.

    Args:
        learning_type: Which encoder pairing the cell supervises.
        strategy: Which loss family shapes the supervision.
        weight: Finite non-negative multiplier applied to the cell's value
            and grads.
        two_sided: Let gradients flow through non-teacher target slots of
            SD/KL summands instead of treating the target side as constant.
        reverse_kl: Evaluate KL summands with the target distribution
            outside the log.

    Raises:
        MeaninglessCombination: for one of the four excluded cells.
    """
    lt = LearningType(learning_type)
    s = Strategy(strategy)
    if (lt, s) in MEANINGLESS_CELLS:
        reason = MEANINGLESS_CELLS[(lt, s)]
        raise MeaninglessCombination(f"({lt.value}, {s.value}) is excluded: {reason}")
    if not (weight >= 0.0 and weight == weight and weight != float("inf")):
        raise ValueError(f"term weight must be a finite number >= 0, got {weight}")
    summands = []
    for kind, roles in _WIRING[(lt, s)]:
        detached = []
        for pos, role in enumerate(roles):
            is_target_slot = kind in ("sd", "kl") and pos >= 2
            detached.append(role.is_teacher or (is_target_slot and not two_sided))
        summands.append(
            Summand(
                kind=kind,
                roles=roles,
                detached=tuple(detached),
                reverse_kl=reverse_kl if kind == "kl" else False,
            )
        )
    return LossTerm(lt, s, float(weight), tuple(summands), two_sided, reverse_kl)


@dataclass(frozen=True)
class ConaConfig:
    """A weighted list of grid cells plus shared evaluation settings."""

    terms: tuple[LossTerm, ...]
    tau: float = DEFAULT_TAU
    deterministic: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "terms", tuple(self.terms))
        if not (self.tau > 0.0):
            raise ValueError(f"tau must be > 0, got {self.tau}")


def recipe(name: str, tau: float = DEFAULT_TAU) -> ConaConfig:
    """Preset configurations.

    * ``"clip"``: the symmetric InfoNCE pair between the two prediction
      slots; the teacher pretraining loop binds its own in-training
      encoders to those slots.
    * ``"motis"``: intra-modal teacher-student InfoNCE, the distillation
      baseline.
    * ``"conaclip"``: the baseline plus the five interaction terms that won
      the ablation, all at weight 1.
    """
    if name == "clip":
        terms = [build_term(LearningType.INTER_STU_STU, Strategy.INFONCE)]
    elif name == "motis":
        terms = [build_term(LearningType.INTRA_TCH_STU, Strategy.INFONCE)]
    elif name == "conaclip":
        terms = [
            build_term(LearningType.INTRA_TCH_STU, Strategy.INFONCE),
            build_term(LearningType.INTRA_STU_STU, Strategy.SD),
            build_term(LearningType.INTER_STU_STU, Strategy.SD),
            build_term(LearningType.INTRA_TCH_STU, Strategy.SD),
            build_term(LearningType.INTRA_TCH_STU, Strategy.SYM_SD),
            build_term(LearningType.INTER_TCH_STU, Strategy.SYM_KLDIV),
        ]
    else:
        raise UnknownRecipe(f"unknown recipe {name!r}; expected clip, motis, or conaclip")
    return ConaConfig(terms=tuple(terms), tau=tau)


def evaluate(
    config: ConaConfig,
    text_student: EmbeddingBatch,
    image_student: EmbeddingBatch,
    text_teacher: EmbeddingBatch,
    image_teacher: EmbeddingBatch,
) -> LossValue:
    """Evaluate a configuration on four embedding batches.

    Returns:
        LossValue whose ``grads`` are keyed by role value ("text_student",
        ...) and whose ``components`` hold each term's weighted value.
        Detached slots and detached batches contribute no gradients, so a
        frozen teacher never receives one.
    """
    batches: dict[Role, EmbeddingBatch] = {
        Role.TEXT_STUDENT: text_student,
        Role.IMAGE_STUDENT: image_student,
        Role.TEXT_TEACHER: text_teacher,
        Role.IMAGE_TEACHER: image_teacher,
    }
    n = text_student.n
    for role, batch in batches.items():
        if batch.n != n:
            raise ShapeMismatch(f"{role.value} batch has N={batch.n}, expected {n}")

    total = 0.0
    grads: dict[str, object] = {}
    components: dict[str, float] = {}
    for idx, term in enumerate(config.terms):
        term_value = 0.0
        for summand in term.summands:
            args = [
                batches[role].detach() if det else batches[role]
                for role, det in zip(summand.roles, summand.detached)
            ]
            if summand.kind == "infonce":
                part = infonce(args[0], args[1], config.tau)
            elif summand.kind == "fd":
                part = feature_distance(args[0], args[1])
            elif summand.kind == "sd":
                part = similarity_distance(args[0], args[1], args[2], args[3])
            else:
                part = kl_div(args[0], args[1], args[2], args[3], config.tau, reverse=summand.reverse_kl)
            term_value += part.value
            slot_names = ("a", "b") if summand.kind in ("infonce", "fd") else ("pred_a", "pred_b", "tgt_a", "tgt_b")
            for slot, role in zip(slot_names, summand.roles):
                if slot in part.grads:
                    key = role.value
                    contrib = term.weight * part.grads[slot]
                    if key in grads:
                        grads[key] = grads[key] + contrib
                    else:
                        grads[key] = contrib
        total += term.weight * term_value
        key = f"{term.learning_type.value}/{term.strategy.value}"
        if key in components:
            key = f"{key}#{idx}"
        components[key] = term.weight * term_value
    return LossValue(value=total, grads=grads, components=components)


# --- JSON configuration ----------------------------------------------------

_TERM_KEYS = {"learning_type", "strategy", "weight", "two_sided", "reverse_kl"}
_CONFIG_KEYS = {"terms", "tau", "deterministic"}


def config_to_json(config: ConaConfig) -> str:
    """Serialize a configuration to canonical JSON."""
    doc = {
        "terms": [
            {
                "learning_type": t.learning_type.value,
                "strategy": t.strategy.value,
                "weight": t.weight,
                "two_sided": t.two_sided,
                "reverse_kl": t.reverse_kl,
            }
            for t in config.terms
        ],
        "tau": config.tau,
        "deterministic": config.deterministic,
    }
    return json.dumps(doc, sort_keys=True)


def config_from_json(text: str) -> ConaConfig:
    """Parse a configuration from JSON, rejecting unknown keys.

    The document shape is ``{"terms": [{"learning_type", "strategy",
    "weight"?, "two_sided"?, "reverse_kl"?}], "tau"?, "deterministic"?}``.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"configuration is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError("configuration must be a JSON object")
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
    raw_terms = doc.get("terms")
    if not isinstance(raw_terms, list) or not raw_terms:
        raise ValueError("configuration needs a non-empty 'terms' list")
    terms = []
    for i, entry in enumerate(raw_terms):
        if not isinstance(entry, dict):
            raise ValueError(f"term {i} must be an object")
        unknown = set(entry) - _TERM_KEYS
        if unknown:
            raise ValueError(f"term {i} has unknown keys: {sorted(unknown)}")
        for required in ("learning_type", "strategy"):
            if required not in entry:
                raise ValueError(f"term {i} is missing {required!r}")
        try:
            lt = LearningType(entry["learning_type"])
        except ValueError:
            raise ValueError(f"term {i} has unknown learning_type {entry['learning_type']!r}") from None
        try:
            s = Strategy(entry["strategy"])
        except ValueError:
            raise ValueError(f"term {i} has unknown strategy {entry['strategy']!r}") from None
        terms.append(
            build_term(
                lt,
                s,
                weight=float(entry.get("weight", 1.0)),
                two_sided=bool(entry.get("two_sided", False)),
                reverse_kl=bool(entry.get("reverse_kl", False)),
            )
        )
    tau = float(doc.get("tau", DEFAULT_TAU))
    deterministic = bool(doc.get("deterministic", False))
    return ConaConfig(terms=tuple(terms), tau=tau, deterministic=deterministic)
