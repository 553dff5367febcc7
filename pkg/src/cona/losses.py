"""Distillation losses over batches of unit-norm embeddings.

Four families are implemented, each returning its scalar value together with
analytic gradients with respect to every non-detached argument:

* ``infonce``      -- contrastive alignment of matched rows,
* ``feature_distance``   -- mean squared distance between two batches,
* ``similarity_distance`` -- mean squared distance between two N x N
  similarity matrices (a predicted one and a target one),
* ``kl_div``       -- row-wise KL divergence between two tempered softmax
  distributions over similarities.

Gradients are taken with respect to the embedding matrices as free
variables; composing with an upstream normalization is the caller's job.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import BadTemperature, ShapeMismatch
from .numerics import matmul_t, row_softmax
from .validation import as_matrix, check_unit_rows

DEFAULT_TAU = 0.07


@dataclass(frozen=True)
class EmbeddingBatch:
    """A batch of N unit-norm embedding rows plus a gradient-flow flag.

    ``detached`` marks the batch as a constant: losses will not report a
    gradient for it.  Teacher outputs are detached; student outputs are not.
    """

    matrix: np.ndarray
    detached: bool = False

    def __post_init__(self) -> None:
        m = as_matrix(self.matrix, "embedding batch")
        check_unit_rows(m, tol=1e-9)
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def detach(self) -> "EmbeddingBatch":
        if self.detached:
            return self
        return EmbeddingBatch(self.matrix, detached=True)


@dataclass
class LossValue:
    """Scalar loss plus gradients keyed by argument slot name."""

    value: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    components: dict[str, float] | None = None


@dataclass(frozen=True)
class SimilarityDistribution:
    """Row-stochastic distribution p(. | row) over pairwise similarities."""

    probs: np.ndarray
    tau: float


def similarity_distribution(a: EmbeddingBatch, b: EmbeddingBatch, tau: float) -> SimilarityDistribution:
    """Tempered softmax over ``a @ b.T``, one distribution per row of ``a``."""
    _check_pair(a, b, same_dim=True)
    return SimilarityDistribution(row_softmax(matmul_t(a.matrix, b.matrix), tau), tau)


def _check_pair(a: EmbeddingBatch, b: EmbeddingBatch, same_dim: bool) -> None:
    if a.n != b.n:
        raise ShapeMismatch(f"batches must share N, got {a.n} vs {b.n}")
    if same_dim and a.dim != b.dim:
        raise ShapeMismatch(f"batches must share dim, got {a.dim} vs {b.dim}")


def _log_softmax_rows(scores: np.ndarray, tau: float) -> np.ndarray:
    if not (tau > 0.0):
        raise BadTemperature(f"temperature must be > 0, got {tau}")
    z = scores / tau
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def infonce(a: EmbeddingBatch, b: EmbeddingBatch, tau: float = DEFAULT_TAU) -> LossValue:
    """Contrastive loss aligning row i of ``a`` with row i of ``b``.

    Value: ``-(1/N) sum_i log softmax_j(a_i . b_j / tau)[i]``.  The softmax
    runs over the columns, so ``b`` supplies both the positive and the
    in-batch negatives for each row of ``a``.

    Returns:
        LossValue with gradient slots "a" and "b" (absent when detached).
    """
    _check_pair(a, b, same_dim=True)
    n = a.n
    scores = matmul_t(a.matrix, b.matrix)
    logp = _log_softmax_rows(scores, tau)
    value = -float(np.trace(logp)) / n

    out = LossValue(value=value)
    if not (a.detached and b.detached):
        # d value / d scores = (P - I) / (N tau),  P = softmax rows.
        g_scores = np.exp(logp)
        np.fill_diagonal(g_scores, g_scores.diagonal() - 1.0)
        g_scores /= n * tau
        if not a.detached:
            out.grads["a"] = g_scores @ b.matrix
        if not b.detached:
            out.grads["b"] = g_scores.T @ a.matrix
    return out


def feature_distance(a: EmbeddingBatch, b: EmbeddingBatch) -> LossValue:
    """Half the mean squared entry-wise difference between two batches.

    Value: ``(1/2) (1/(N d)) sum_{i,k} (a_{ik} - b_{ik})^2``.
    """
    _check_pair(a, b, same_dim=True)
    n, d = a.matrix.shape
    diff = a.matrix - b.matrix
    value = 0.5 * float(np.sum(diff * diff)) / (n * d)

    out = LossValue(value=value)
    if not a.detached:
        out.grads["a"] = diff / (n * d)
    if not b.detached:
        out.grads["b"] = -diff / (n * d)
    return out


def similarity_distance(
    pred_a: EmbeddingBatch,
    pred_b: EmbeddingBatch,
    tgt_a: EmbeddingBatch,
    tgt_b: EmbeddingBatch,
) -> LossValue:
    """Half the mean squared difference between two similarity matrices.

    The predicted matrix is ``pred_a @ pred_b.T`` and the target one is
    ``tgt_a @ tgt_b.T``; both are N x N while the two pairs may live in
    different embedding dims.

    Value: ``(1/2) (1/N^2) sum_{i,j} (s^pred_{ij} - s^tgt_{ij})^2``.
    """
    _check_pair(pred_a, pred_b, same_dim=True)
    _check_pair(tgt_a, tgt_b, same_dim=True)
    if pred_a.n != tgt_a.n:
        raise ShapeMismatch(f"pred and tgt pairs must share N, got {pred_a.n} vs {tgt_a.n}")
    n = pred_a.n
    diff = matmul_t(pred_a.matrix, pred_b.matrix) - matmul_t(tgt_a.matrix, tgt_b.matrix)
    value = 0.5 * float(np.sum(diff * diff)) / (n * n)

    out = LossValue(value=value)
    g = diff / (n * n)
    if not pred_a.detached:
        out.grads["pred_a"] = g @ pred_b.matrix
    if not pred_b.detached:
        out.grads["pred_b"] = g.T @ pred_a.matrix
    if not tgt_a.detached:
        out.grads["tgt_a"] = -g @ tgt_b.matrix
    if not tgt_b.detached:
        out.grads["tgt_b"] = -g.T @ tgt_a.matrix
    return out


def kl_div(
    pred_a: EmbeddingBatch,
    pred_b: EmbeddingBatch,
    tgt_a: EmbeddingBatch,
    tgt_b: EmbeddingBatch,
    tau: float = DEFAULT_TAU,
    reverse: bool = False,
) -> LossValue:
    """Row-averaged KL divergence between two similarity distributions.

    With ``P = softmax(pred_a @ pred_b.T / tau)`` rows and
    ``Q = softmax(tgt_a @ tgt_b.T / tau)`` rows, the default direction is

        ``(1/N) sum_{i,j} P_{ij} log(P_{ij} / Q_{ij})``

    i.e. the predicted distribution sits outside the log.  ``reverse=True``
    swaps the roles of P and Q in the divergence while gradient slots keep
    their original argument names.
    """
    _check_pair(pred_a, pred_b, same_dim=True)
    _check_pair(tgt_a, tgt_b, same_dim=True)
    if pred_a.n != tgt_a.n:
        raise ShapeMismatch(f"pred and tgt pairs must share N, got {pred_a.n} vs {tgt_a.n}")

    if reverse:
        first = (tgt_a, tgt_b, "tgt_a", "tgt_b")
        second = (pred_a, pred_b, "pred_a", "pred_b")
    else:
        first = (pred_a, pred_b, "pred_a", "pred_b")
        second = (tgt_a, tgt_b, "tgt_a", "tgt_b")

    fa, fb, fa_name, fb_name = first
    sa, sb, sa_name, sb_name = second
    n = fa.n

    logp = _log_softmax_rows(matmul_t(fa.matrix, fb.matrix), tau)
    logq = _log_softmax_rows(matmul_t(sa.matrix, sb.matrix), tau)
    p = np.exp(logp)
    ratio = logp - logq
    row_kl = np.sum(p * ratio, axis=1, keepdims=True)
    value = float(np.sum(p * ratio)) / n

    out = LossValue(value=value)
    # d value / d (first-pair logits): P .* (ratio - row_kl) / N, then the
    # 1/tau from logits = scores / tau.
    if not (fa.detached and fb.detached):
        g_first = p * (ratio - row_kl) / (n * tau)
        if not fa.detached:
            out.grads[fa_name] = g_first @ fb.matrix
        if not fb.detached:
            out.grads[fb_name] = g_first.T @ fa.matrix
    # d value / d (second-pair logits): (Q - P) / (N tau).
    if not (sa.detached and sb.detached):
        g_second = (np.exp(logq) - p) / (n * tau)
        if not sa.detached:
            out.grads[sa_name] = g_second @ sb.matrix
        if not sb.detached:
            out.grads[sb_name] = g_second.T @ sa.matrix
    return out
