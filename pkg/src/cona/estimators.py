"""Estimator-style front doors for the two training phases.

Both classes follow the scikit-learn contract: constructor arguments are
stored verbatim, ``fit`` learns state into trailing-underscore attributes,
and ``get_params``/``set_params``/``clone`` work out of the box.  They are
thin shells over :mod:`cona.training`; nothing algorithmic lives here.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import grid
from .data import SyntheticDataset
from .encoders import (
    DualEncoderBundle,
    Encoder,
    EncoderSpec,
    forward,
    init_encoder,
    init_student_from_teacher,
)
from .losses import DEFAULT_TAU
from .training import TrainConfig, distill, evaluate_recall, pretrain_teacher


def _check_dataset(dataset) -> SyntheticDataset:
    if not isinstance(dataset, SyntheticDataset):
        raise TypeError(f"expected a SyntheticDataset, got {type(dataset).__name__}")
    return dataset


class ClipTeacherTrainer(BaseEstimator):
    """Fit a pair of frozen teacher towers with contrastive pretraining.

    Args:
        embed_dim: Shared embedding width of both towers.
        hidden_dim: Width of every non-final layer.
        num_layers: Depth of each tower.
        tau: Softmax temperature of the contrastive loss.
        epochs, batch_size, peak_lr, weight_decay, warmup_frac: optimizer
            schedule knobs, one AdamW step per mini-batch.
        holdout_frac: Tail fraction of pairs reserved for recall reporting.
        seed: Drives parameter init and epoch shuffling.
        deterministic: Run numeric kernels single-threaded so repeated runs
            are bit-identical.
    """

    def __init__(
        self,
        embed_dim: int = 32,
        hidden_dim: int = 64,
        num_layers: int = 6,
        tau: float = DEFAULT_TAU,
        epochs: int = 20,
        batch_size: int = 256,
        peak_lr: float = 3e-4,
        weight_decay: float = 0.1,
        warmup_frac: float = 0.05,
        holdout_frac: float = 0.1,
        seed: int = 0,
        deterministic: bool = False,
    ):
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.tau = tau
        self.epochs = epochs
        self.batch_size = batch_size
        self.peak_lr = peak_lr
        self.weight_decay = weight_decay
        self.warmup_frac = warmup_frac
        self.holdout_frac = holdout_frac
        self.seed = seed
        self.deterministic = deterministic

    def fit(self, dataset: SyntheticDataset, y=None) -> "ClipTeacherTrainer":
        dataset = _check_dataset(dataset)
        init_rng = np.random.default_rng(np.random.SeedSequence([int(self.seed), 0]))
        text_spec = EncoderSpec(dataset.text_inputs.shape[1], self.hidden_dim, self.num_layers, self.embed_dim)
        image_spec = EncoderSpec(dataset.image_inputs.shape[1], self.hidden_dim, self.num_layers, self.embed_dim)
        bundle = DualEncoderBundle(
            text_teacher=Encoder(text_spec, init_encoder(text_spec, init_rng)),
            image_teacher=Encoder(image_spec, init_encoder(image_spec, init_rng)),
        )
        config = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            peak_lr=self.peak_lr,
            weight_decay=self.weight_decay,
            warmup_frac=self.warmup_frac,
            holdout_frac=self.holdout_frac,
            seed=int(self.seed),
            deterministic=self.deterministic,
        )
        self.metrics_ = pretrain_teacher(bundle, dataset, config, tau=self.tau)
        self.bundle_ = bundle
        return self

    def transform(self, X, modality: str = "text") -> np.ndarray:
        enc = self.bundle_.require(f"{modality}_teacher")
        return forward(enc.params, enc.spec, X).matrix


class ConaDistiller(BaseEstimator):
    """Distill a pair of student towers against frozen teachers.

    The supervision is a grid configuration: either a preset ``recipe``
    name ("motis", "conaclip") or an explicit ``config`` built with
    :func:`cona.grid.build_term` / :func:`cona.grid.config_from_json`,
    which wins when both are given.

    Args:
        teachers: Bundle holding frozen text/image teacher towers.
        recipe: Preset configuration name.
        config: Explicit ConaConfig overriding the recipe.
        tau: Temperature used when resolving a recipe name.
        student_hidden_dim, student_layers: Student architecture; the
            embedding width always matches the teachers'.
        init_from_teacher: Start students as bit-copies of the teachers'
            first layers instead of random init (requires matching layer
            shapes).
        tap_parts: When > 0, add intermediate feature-distance losses on
            that many evenly spaced layer boundaries.
        tap_weight: Multiplier on each tap loss.
        epochs, batch_size, peak_lr, weight_decay, warmup_frac: optimizer
            schedule knobs.
        holdout_frac: Tail fraction of pairs held out for recall.
        eval_ks: Recall cutoffs logged per epoch.
        seed: Drives student init, shuffling, and tap projections.
        deterministic: Bit-reproducible mode (single-threaded kernels).
    """

    def __init__(
        self,
        teachers: DualEncoderBundle | None = None,
        recipe: str = "conaclip",
        config: grid.ConaConfig | None = None,
        tau: float = DEFAULT_TAU,
        student_hidden_dim: int = 64,
        student_layers: int = 2,
        init_from_teacher: bool = False,
        tap_parts: int = 0,
        tap_weight: float = 1.0,
        epochs: int = 5,
        batch_size: int = 256,
        peak_lr: float = 3e-3,
        weight_decay: float = 0.1,
        warmup_frac: float = 0.05,
        holdout_frac: float = 0.1,
        eval_ks: tuple[int, ...] = (1, 5, 10),
        seed: int = 0,
        deterministic: bool = False,
    ):
        self.teachers = teachers
        self.recipe = recipe
        self.config = config
        self.tau = tau
        self.student_hidden_dim = student_hidden_dim
        self.student_layers = student_layers
        self.init_from_teacher = init_from_teacher
        self.tap_parts = tap_parts
        self.tap_weight = tap_weight
        self.epochs = epochs
        self.batch_size = batch_size
        self.peak_lr = peak_lr
        self.weight_decay = weight_decay
        self.warmup_frac = warmup_frac
        self.holdout_frac = holdout_frac
        self.eval_ks = eval_ks
        self.seed = seed
        self.deterministic = deterministic

    def _resolved_config(self) -> grid.ConaConfig:
        if self.config is not None:
            return self.config
        return grid.recipe(self.recipe, tau=self.tau)

    def fit(self, dataset: SyntheticDataset, y=None) -> "ConaDistiller":
        dataset = _check_dataset(dataset)
        if self.teachers is None:
            raise ValueError("a teachers bundle is required; fit a ClipTeacherTrainer first")
        text_t = self.teachers.require("text_teacher")
        image_t = self.teachers.require("image_teacher")
        embed_dim = text_t.spec.output_dim

        text_spec = EncoderSpec(
            dataset.text_inputs.shape[1], self.student_hidden_dim, self.student_layers, embed_dim
        )
        image_spec = EncoderSpec(
            dataset.image_inputs.shape[1], self.student_hidden_dim, self.student_layers, embed_dim
        )
        if self.init_from_teacher:
            text_params = init_student_from_teacher(text_t, text_spec)
            image_params = init_student_from_teacher(image_t, image_spec)
        else:
            init_rng = np.random.default_rng(np.random.SeedSequence([int(self.seed), 1]))
            text_params = init_encoder(text_spec, init_rng)
            image_params = init_encoder(image_spec, init_rng)
        bundle = DualEncoderBundle(
            text_teacher=text_t,
            image_teacher=image_t,
            text_student=Encoder(text_spec, text_params),
            image_student=Encoder(image_spec, image_params),
        )
        train_config = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            peak_lr=self.peak_lr,
            weight_decay=self.weight_decay,
            warmup_frac=self.warmup_frac,
            holdout_frac=self.holdout_frac,
            eval_ks=tuple(self.eval_ks),
            tap_parts=self.tap_parts,
            tap_weight=self.tap_weight,
            seed=int(self.seed),
            deterministic=self.deterministic,
        )
        self.metrics_ = distill(bundle, dataset, self._resolved_config(), train_config)
        self.bundle_ = bundle
        return self

    def transform(self, X, modality: str = "text") -> np.ndarray:
        """Embed raw input rows with the fitted student for one modality."""
        enc = self.bundle_.require(f"{modality}_student")
        return forward(enc.params, enc.spec, X).matrix

    def score(self, dataset: SyntheticDataset, y=None) -> float:
        """Mean held-out recall@1 across both retrieval directions."""
        recalls = evaluate_recall(
            self.bundle_, _check_dataset(dataset), role="student",
            ks=(1,), split="val", holdout_frac=self.holdout_frac,
        )
        return 0.5 * (recalls["text_to_image"][1] + recalls["image_to_text"][1])
