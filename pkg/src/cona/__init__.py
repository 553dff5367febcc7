"""Distillation for dual-encoder retrieval over a fully-connected
knowledge-interaction grid, plus a desk-scale training harness."""

__version__ = "0.1.0"

from . import exceptions
from .data import SyntheticDataset, generate_pairs, load_dataset, save_dataset
from .encoders import (
    DualEncoderBundle,
    Encoder,
    EncoderParams,
    EncoderSpec,
    backward,
    forward,
    forward_with_taps,
    init_encoder,
    init_student_from_teacher,
    load_checkpoint,
    save_checkpoint,
)
from .estimators import ClipTeacherTrainer, ConaDistiller
from .grid import (
    ConaConfig,
    LearningType,
    LossTerm,
    Role,
    Strategy,
    build_term,
    config_from_json,
    config_to_json,
    evaluate,
    recipe,
    valid_cells,
)
from .losses import (
    EmbeddingBatch,
    LossValue,
    SimilarityDistribution,
    feature_distance,
    infonce,
    kl_div,
    similarity_distance,
    similarity_distribution,
)
from .numerics import (
    GradCheckReport,
    compare_grads,
    finite_diff_grad,
    l2_normalize_rows,
    matmul_t,
    row_softmax,
)
from .optim import AdamState, ScheduleSpec, adamw_step, init_adam, lr_at
from .retrieval import (
    RecallReport,
    RetrievalIndex,
    build_index,
    load_index,
    recall_at_k,
    save_index,
    topk,
)
from .training import TrainConfig, distill, evaluate_recall, pretrain_teacher

__all__ = [
    "AdamState",
    "ClipTeacherTrainer",
    "ConaConfig",
    "ConaDistiller",
    "DualEncoderBundle",
    "EmbeddingBatch",
    "Encoder",
    "EncoderParams",
    "EncoderSpec",
    "GradCheckReport",
    "LearningType",
    "LossTerm",
    "LossValue",
    "RecallReport",
    "RetrievalIndex",
    "Role",
    "ScheduleSpec",
    "SimilarityDistribution",
    "Strategy",
    "SyntheticDataset",
    "TrainConfig",
    "adamw_step",
    "backward",
    "build_index",
    "build_term",
    "compare_grads",
    "config_from_json",
    "config_to_json",
    "distill",
    "evaluate",
    "evaluate_recall",
    "exceptions",
    "feature_distance",
    "finite_diff_grad",
    "forward",
    "forward_with_taps",
    "generate_pairs",
    "infonce",
    "init_adam",
    "init_encoder",
    "init_student_from_teacher",
    "kl_div",
    "l2_normalize_rows",
    "load_checkpoint",
    "load_dataset",
    "load_index",
    "lr_at",
    "matmul_t",
    "pretrain_teacher",
    "recall_at_k",
    "recipe",
    "row_softmax",
    "save_checkpoint",
    "save_dataset",
    "save_index",
    "similarity_distance",
    "similarity_distribution",
    "topk",
    "valid_cells",
]
