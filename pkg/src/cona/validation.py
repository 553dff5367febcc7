"""Input-validation helpers used across the package.

Everything operates on dense, row-major ``float64`` arrays.  These helpers
coerce and check inputs once at module boundaries so the numeric kernels can
assume clean data.
"""

from __future__ import annotations

import numpy as np

from .exceptions import NonFiniteValue, NotNormalized, ShapeMismatch


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce ``x`` to a 2-D float64 array and check it is finite.

    Args:
        x: Anything ``np.asarray`` accepts that yields a 2-D array.
        name: Label used in error messages.

    Returns:
        A C-contiguous float64 array of shape (rows, cols).
    """
    m = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if m.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got ndim={m.ndim}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeMismatch(f"{name} must be non-empty, got shape {m.shape}")
    check_finite(m, name)
    return m


def check_finite(x: np.ndarray, name: str = "array") -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteValue(f"{name} contains NaN or infinity")


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "operands") -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what} must share a shape, got {a.shape} vs {b.shape}")


def check_unit_rows(m: np.ndarray, tol: float = 1e-9, name: str = "embeddings") -> None:
    """Check every row of ``m`` has an L2 norm of 1 within ``tol``."""
    norms = np.linalg.norm(m, axis=1)
    worst = float(np.max(np.abs(norms - 1.0))) if norms.size else 0.0
    if worst > tol:
        raise NotNormalized(f"{name} rows deviate from unit norm by {worst:.3e} (tol {tol:.1e})")
