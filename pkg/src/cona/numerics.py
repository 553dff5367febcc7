"""Dense float64 matrix primitives: normalization, tempered softmax,
similarity products, and a central-difference gradient checker.

A "matrix" throughout the package is a 2-D, row-major ``numpy.float64``
array; these wrappers add the domain checks the rest of the code relies on
(finiteness, nonzero rows, positive temperature).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import BadTemperature, NonFiniteValue, ShapeMismatch, ZeroRow
from .validation import as_matrix, check_finite

# Rows with a norm at or below this cannot be normalized meaningfully.
ZERO_ROW_FLOOR = 1e-30

DEFAULT_FD_STEP = 1e-4


def l2_normalize_rows(m) -> np.ndarray:
    """Scale every row of ``m`` to unit L2 norm.

    Raises:
        ZeroRow: if any row norm is at or below ``ZERO_ROW_FLOOR``.
    """
    m = as_matrix(m, "l2_normalize_rows input")
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms <= ZERO_ROW_FLOOR):
        row = int(np.argmax(norms[:, 0] <= ZERO_ROW_FLOOR))
        raise ZeroRow(f"row {row} has near-zero norm and cannot be normalized")
    return m / norms


def row_softmax(m, tau: float) -> np.ndarray:
    """Row-wise softmax of ``m / tau``, stabilised by a per-row max shift.

    Args:
        m: Score matrix, one distribution per row.
        tau: Strictly positive temperature.

    Returns:
        A row-stochastic matrix of the same shape.
    """
    if not (tau > 0.0):
        raise BadTemperature(f"temperature must be > 0, got {tau}")
    m = as_matrix(m, "row_softmax input")
    z = m / tau
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def matmul_t(a, b) -> np.ndarray:
    """Similarity product ``a @ b.T`` for matrices with a shared column count."""
    a = as_matrix(a, "matmul_t lhs")
    b = as_matrix(b, "matmul_t rhs")
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"column counts differ: {a.shape[1]} vs {b.shape[1]}")
    return a @ b.T


def finite_diff_grad(
    f: Callable[[np.ndarray], float],
    at: np.ndarray,
    h: float = DEFAULT_FD_STEP,
) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array.

    Evaluates ``(f(x + h e) - f(x - h e)) / (2 h)`` for every coordinate,
    so it costs two evaluations of ``f`` per entry.  Works for arrays of any
    shape; the result matches the shape of ``at``.
    """
    at = np.asarray(at, dtype=np.float64)
    grad = np.zeros_like(at)
    flat = at.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(f(at))
        flat[i] = orig - h
        down = float(f(at))
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NonFiniteValue(f"objective is non-finite near coordinate {i}")
        gflat[i] = (up - down) / (2.0 * h)
    return grad


@dataclass(frozen=True)
class GradCheckReport:
    """Outcome of comparing an analytic gradient against a numeric one."""

    max_abs_err: float
    max_rel_err: float
    worst_coordinate: tuple[int, ...]

    def ok(self, tol: float) -> bool:
        return self.max_rel_err <= tol


def compare_grads(
    analytic: np.ndarray,
    numeric: np.ndarray,
    zero_tol: float = 1e-10,
) -> GradCheckReport:
    """Build a :class:`GradCheckReport` from two same-shaped gradients.

    Relative error uses ``|a - n| / max(|a|, |n|)`` per coordinate;
    coordinates where both magnitudes sit below ``zero_tol`` count as exact.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ShapeMismatch(f"gradient shapes differ: {analytic.shape} vs {numeric.shape}")
    check_finite(analytic, "analytic gradient")
    check_finite(numeric, "numeric gradient")
    abs_err = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel_err = np.where(scale > zero_tol, abs_err / np.maximum(scale, zero_tol), 0.0)
    worst_flat = int(np.argmax(rel_err))
    worst = np.unravel_index(worst_flat, analytic.shape) if analytic.size else (0,)
    return GradCheckReport(
        max_abs_err=float(abs_err.max(initial=0.0)),
        max_rel_err=float(rel_err.max(initial=0.0)),
        worst_coordinate=tuple(int(i) for i in worst),
    )
