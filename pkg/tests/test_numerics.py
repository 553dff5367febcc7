"""Checks for the dense matrix primitives and the gradient checker."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cona.exceptions import (
    BadTemperature,
    NonFiniteValue,
    NotNormalized,
    ShapeMismatch,
    ZeroRow,
)
from cona.losses import EmbeddingBatch, infonce
from cona.numerics import (
    ZERO_ROW_FLOOR,
    compare_grads,
    finite_diff_grad,
    l2_normalize_rows,
    matmul_t,
    row_softmax,
)
from cona.validation import as_matrix, check_unit_rows

import oracles


def test_normalize_rows_unit_norm():
    # 4x8 instance with a fixed seed; every output row must land on the sphere.
    rng = np.random.default_rng(0)
    m = rng.standard_normal((4, 8))
    out = l2_normalize_rows(m)
    norms = np.linalg.norm(out, axis=1)
    assert np.max(np.abs(norms - 1.0)) <= 1e-12
    # directions preserved
    for i in range(4):
        cos = float(out[i] @ m[i]) / np.linalg.norm(m[i])
        assert abs(cos - 1.0) <= 1e-12


def test_normalize_matches_scalar_loop():
    rng = np.random.default_rng(17)
    m = rng.standard_normal((5, 3)) * 7.0
    assert np.allclose(l2_normalize_rows(m), oracles.normalize_rows_loop(m), atol=1e-15)


def test_normalize_rejects_zero_row():
    m = np.array([[1.0, 2.0], [0.0, 0.0]])
    with pytest.raises(ZeroRow):
        l2_normalize_rows(m)


def test_normalize_floor_is_tiny():
    # Values just above the floor still normalize.
    m = np.full((1, 2), 1e-15)
    out = l2_normalize_rows(m)
    assert abs(np.linalg.norm(out[0]) - 1.0) <= 1e-12
    assert ZERO_ROW_FLOOR < 1e-20


def test_matmul_t_against_triple_loop():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((3, 5))
    b = rng.standard_normal((4, 5))
    got = matmul_t(a, b)
    want = np.asarray(oracles.sim_loop(a, b))
    assert got.shape == (3, 4)
    assert np.max(np.abs(got - want)) <= 1e-12


def test_matmul_t_column_mismatch():
    with pytest.raises(ShapeMismatch):
        matmul_t(np.ones((2, 3)), np.ones((2, 4)))


def test_row_softmax_matches_loop_and_sums_to_one():
    rng = np.random.default_rng(5)
    scores = rng.standard_normal((6, 9)) * 4.0
    for tau in (0.05, 0.5, 1.0):
        got = row_softmax(scores, tau)
        want = np.asarray(oracles.softmax_rows_loop(scores, tau))
        assert np.max(np.abs(got - want)) <= 1e-12
        assert np.max(np.abs(got.sum(axis=1) - 1.0)) <= 1e-12


def test_row_softmax_temperature_must_be_positive():
    scores = np.zeros((2, 2))
    for tau in (0.0, -1.0, float("nan")):
        with pytest.raises(BadTemperature):
            row_softmax(scores, tau)


def test_row_softmax_handles_large_scores():
    # The max-shift keeps huge logits from overflowing.
    scores = np.array([[1000.0, 999.0], [-1000.0, -1000.0]])
    out = row_softmax(scores, 1.0)
    assert np.all(np.isfinite(out))
    assert abs(out[0, 0] - 1.0 / (1.0 + math.exp(-1.0))) <= 1e-12
    assert np.allclose(out[1], [0.5, 0.5])


@settings(max_examples=50, deadline=None)
@given(
    st.lists(
        st.lists(st.floats(-30, 30), min_size=2, max_size=5),
        min_size=1,
        max_size=4,
    ).filter(lambda rows: len({len(r) for r in rows}) == 1)
)
def test_row_softmax_shift_invariance(rows):
    """Adding a per-row constant never changes the distribution."""
    m = np.asarray(rows, dtype=np.float64)
    shifted = m + np.arange(1.0, m.shape[0] + 1.0)[:, None] * 3.7
    a = row_softmax(m, 0.3)
    b = row_softmax(shifted, 0.3)
    assert np.max(np.abs(a - b)) <= 1e-9
    assert np.max(np.abs(a.sum(axis=1) - 1.0)) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(
    st.lists(
        st.lists(st.floats(-10, 10), min_size=2, max_size=6),
        min_size=1,
        max_size=5,
    ).filter(
        lambda rows: len({len(r) for r in rows}) == 1
        and all(math.sqrt(sum(x * x for x in r)) > 1e-6 for r in rows)
    )
)
def test_normalize_idempotent(rows):
    m = np.asarray(rows, dtype=np.float64)
    once = l2_normalize_rows(m)
    twice = l2_normalize_rows(once)
    assert np.max(np.abs(once - twice)) <= 1e-12


def test_finite_diff_on_known_gradient():
    # f(x) = sum sin(x) has gradient cos(x); central differences are
    # accurate to O(h^2) so 1e-7 is comfortable at h=1e-4.
    rng = np.random.default_rng(33)
    x = rng.standard_normal((3, 4))
    g = finite_diff_grad(lambda m: float(np.sum(np.sin(m))), x.copy())
    assert np.max(np.abs(g - np.cos(x))) <= 1e-7


def test_finite_diff_leaves_input_unchanged():
    x = np.arange(6.0).reshape(2, 3)
    before = x.copy()
    finite_diff_grad(lambda m: float(np.sum(m**2)), x)
    assert np.array_equal(x, before)


def test_finite_diff_rejects_non_finite_objective():
    x = np.ones((1, 2))
    with pytest.raises(NonFiniteValue):
        finite_diff_grad(lambda m: float("nan"), x)


def test_grad_check_full_pipeline_on_contrastive_loss():
    """Analytic gradients of the contrastive loss, composed through row
    normalization, agree with central differences on the raw inputs."""
    rng = np.random.default_rng(2)
    raw_a = rng.standard_normal((5, 7))
    raw_b = rng.standard_normal((5, 7))
    tau = 0.07

    def objective(raw):
        a = l2_normalize_rows(raw)
        b = l2_normalize_rows(raw_b)
        return infonce(EmbeddingBatch(a), EmbeddingBatch(b), tau).value

    numeric = finite_diff_grad(objective, raw_a.copy())

    a = l2_normalize_rows(raw_a)
    b = l2_normalize_rows(raw_b)
    out = infonce(EmbeddingBatch(a), EmbeddingBatch(b), tau)
    g_y = out.grads["a"]
    # chain rule through y = x / |x| per row
    norms = np.linalg.norm(raw_a, axis=1, keepdims=True)
    analytic = (g_y - (g_y * a).sum(axis=1, keepdims=True) * a) / norms

    report = compare_grads(analytic, numeric)
    assert report.ok(1e-4)
    assert report.max_abs_err < 1e-6


def test_compare_grads_reports_worst_coordinate():
    a = np.zeros((2, 2))
    n = np.zeros((2, 2))
    n[1, 0] = 1.0
    report = compare_grads(a, n)
    assert report.worst_coordinate == (1, 0)
    assert report.max_rel_err == 1.0
    assert not report.ok(1e-4)


def test_compare_grads_zero_tolerance():
    # Two gradients that only differ below the floor count as identical.
    a = np.full((1, 3), 1e-13)
    n = np.zeros((1, 3))
    report = compare_grads(a, n)
    assert report.max_rel_err == 0.0
    assert report.ok(0.0)


def test_compare_grads_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        compare_grads(np.zeros((2, 2)), np.zeros((2, 3)))


def test_as_matrix_contract():
    out = as_matrix([[1, 2], [3, 4]])
    assert out.dtype == np.float64 and out.flags["C_CONTIGUOUS"]
    with pytest.raises(ShapeMismatch):
        as_matrix(np.zeros(3))
    with pytest.raises(ShapeMismatch):
        as_matrix(np.zeros((0, 2)))
    with pytest.raises(NonFiniteValue):
        as_matrix([[1.0, float("inf")]])


def test_check_unit_rows_tolerance():
    good = np.eye(3)
    check_unit_rows(good)
    with pytest.raises(NotNormalized):
        check_unit_rows(np.eye(3) * 1.001)
