"""Checks for the interaction grid: every valid cell against the scalar
oracle formulas, the exclusion list, recipes, gradient routing, and the
JSON configuration format."""

from __future__ import annotations

import json

import numpy as np
import pytest

from cona.exceptions import MeaninglessCombination, ShapeMismatch, UnknownRecipe
from cona.grid import (
    ConaConfig,
    LearningType,
    MEANINGLESS_CELLS,
    Role,
    Strategy,
    build_term,
    config_from_json,
    config_to_json,
    evaluate,
    recipe,
    valid_cells,
)
from cona.losses import EmbeddingBatch
from cona.numerics import compare_grads, finite_diff_grad, l2_normalize_rows

import oracles

TAU = 0.07


def batch(m, detached: bool = False) -> EmbeddingBatch:
    return EmbeddingBatch(np.asarray(m, dtype=np.float64), detached=detached)


def eval_cells(cells, ts, is_, tt, it, tau=TAU, **term_kwargs):
    cfg = ConaConfig(
        terms=tuple(build_term(lt, s, **term_kwargs) for lt, s in cells),
        tau=tau,
    )
    return evaluate(cfg, batch(ts), batch(is_), batch(tt), batch(it))


def test_grid_has_twenty_valid_and_four_excluded_cells():
    cells = valid_cells()
    assert len(cells) == 20
    assert len(set(cells)) == 20
    assert len(MEANINGLESS_CELLS) == 4
    assert set(cells).isdisjoint(MEANINGLESS_CELLS)
    assert len(cells) + len(MEANINGLESS_CELLS) == len(LearningType) * len(Strategy)
    # the oracle table enumerates exactly the same twenty cells
    assert {(lt.value, s.value) for lt, s in cells} == set(oracles.CELL_FORMULAS)


def test_excluded_cells_are_rejected():
    for lt, s in oracles.MEANINGLESS:
        with pytest.raises(MeaninglessCombination):
            build_term(lt, s)


@pytest.mark.parametrize("lt,s", valid_cells(), ids=lambda v: getattr(v, "value", str(v)))
def test_each_cell_matches_oracle(lt, s):
    rng = np.random.default_rng(7_000 + 31 * list(valid_cells()).index((lt, s)))
    ts, is_, tt, it = oracles.four_batches(rng, 5, 8)
    got = eval_cells([(lt, s)], ts, is_, tt, it)
    want = oracles.CELL_FORMULAS[(lt.value, s.value)](ts, is_, tt, it, TAU)
    assert abs(got.value - want) / max(abs(want), 1e-300) <= 1e-9


def test_cross_width_cells_accept_different_teacher_dim():
    """Cells that never pair a student with a teacher inside one similarity
    work even when the two stacks embed at different widths."""
    rng = np.random.default_rng(77)
    ts, is_ = oracles.unit_rows(rng, 4, 6), oracles.unit_rows(rng, 4, 6)
    tt, it = oracles.unit_rows(rng, 4, 9), oracles.unit_rows(rng, 4, 9)
    cells = [
        (LearningType.INTRA_STU_STU, Strategy.SD),
        (LearningType.INTRA_STU_STU, Strategy.KLDIV),
        (LearningType.INTRA_STU_STU, Strategy.SYM_SD),
        (LearningType.INTRA_STU_STU, Strategy.SYM_KLDIV),
        (LearningType.INTER_STU_STU, Strategy.SD),
        (LearningType.INTER_STU_STU, Strategy.KLDIV),
    ]
    for lt, s in cells:
        got = eval_cells([(lt, s)], ts, is_, tt, it)
        want = oracles.CELL_FORMULAS[(lt.value, s.value)](ts, is_, tt, it, TAU)
        assert abs(got.value - want) / max(abs(want), 1e-300) <= 1e-9, (lt, s)


def test_mixed_width_fails_when_student_meets_teacher():
    rng = np.random.default_rng(78)
    ts, is_ = oracles.unit_rows(rng, 4, 6), oracles.unit_rows(rng, 4, 6)
    tt, it = oracles.unit_rows(rng, 4, 9), oracles.unit_rows(rng, 4, 9)
    with pytest.raises(ShapeMismatch):
        eval_cells([(LearningType.INTRA_TCH_STU, Strategy.INFONCE)], ts, is_, tt, it)


# --- recipes -----------------------------------------------------------------


def test_full_recipe_is_baseline_plus_five_cells():
    cfg = recipe("conaclip")
    got = [(t.learning_type, t.strategy) for t in cfg.terms]
    assert got == [
        (LearningType.INTRA_TCH_STU, Strategy.INFONCE),
        (LearningType.INTRA_STU_STU, Strategy.SD),
        (LearningType.INTER_STU_STU, Strategy.SD),
        (LearningType.INTRA_TCH_STU, Strategy.SD),
        (LearningType.INTRA_TCH_STU, Strategy.SYM_SD),
        (LearningType.INTER_TCH_STU, Strategy.SYM_KLDIV),
    ]
    assert all(t.weight == 1.0 for t in cfg.terms)
    assert cfg.tau == TAU


def test_full_recipe_value_matches_oracle_and_term_sum():
    rng = np.random.default_rng(7)
    ts, is_, tt, it = oracles.four_batches(rng, 6, 8)
    cfg = recipe("conaclip")
    full = evaluate(cfg, batch(ts), batch(is_), batch(tt), batch(it))

    want = oracles.full_recipe_loop(ts, is_, tt, it, TAU)
    assert abs(full.value - want) / max(abs(want), 1e-300) <= 1e-9

    # the whole equals the sum of its separately evaluated parts
    parts = 0.0
    for term in cfg.terms:
        single = ConaConfig(terms=(term,), tau=cfg.tau)
        parts += evaluate(single, batch(ts), batch(is_), batch(tt), batch(it)).value
    assert abs(full.value - parts) <= 1e-12

    assert set(full.components) == {
        "IntraTchStu/InfoNCE",
        "IntraStuStu/SD",
        "InterStuStu/SD",
        "IntraTchStu/SD",
        "IntraTchStu/SymSD",
        "InterTchStu/SymKLDiv",
    }
    assert abs(sum(full.components.values()) - full.value) <= 1e-12


def test_baseline_recipe_matches_oracle():
    rng = np.random.default_rng(8)
    ts, is_, tt, it = oracles.four_batches(rng, 5, 6)
    cfg = recipe("motis")
    got = evaluate(cfg, batch(ts), batch(is_), batch(tt), batch(it)).value
    want = oracles.baseline_distill_loop(ts, is_, tt, it, TAU)
    assert abs(got - want) / max(abs(want), 1e-300) <= 1e-9


def test_pretraining_recipe_is_symmetric_contrastive():
    """The contrastive recipe wires the two prediction slots against each
    other, which during pretraining carry the in-training encoders."""
    rng = np.random.default_rng(9)
    text, image = oracles.unit_rows(rng, 5, 6), oracles.unit_rows(rng, 5, 6)
    dummy = oracles.unit_rows(rng, 5, 6)
    cfg = recipe("clip")
    got = evaluate(cfg, batch(text), batch(image), batch(dummy), batch(dummy))
    want = oracles.symmetric_pretrain_loop(text, image, TAU)
    assert abs(got.value - want) / max(abs(want), 1e-300) <= 1e-9
    # nothing but the two bound slots receives gradients
    assert set(got.grads) == {"text_student", "image_student"}


def test_unknown_recipe():
    with pytest.raises(UnknownRecipe):
        recipe("distilclip")


# --- weights and gradient routing ---------------------------------------------


def test_weight_scales_value_and_grads_exactly():
    rng = np.random.default_rng(300)
    ts, is_, tt, it = oracles.four_batches(rng, 4, 5)
    cell = (LearningType.INTER_STU_STU, Strategy.KLDIV)
    base = eval_cells([cell], ts, is_, tt, it)
    scaled = eval_cells([cell], ts, is_, tt, it, weight=4.0)
    assert scaled.value == 4.0 * base.value
    for key in base.grads:
        assert np.array_equal(scaled.grads[key], 4.0 * base.grads[key])


def test_zero_weight_gives_zero_value():
    rng = np.random.default_rng(301)
    ts, is_, tt, it = oracles.four_batches(rng, 4, 5)
    cfg = ConaConfig(
        terms=tuple(build_term(lt, s, weight=0.0) for lt, s in valid_cells()),
        tau=TAU,
    )
    out = evaluate(cfg, batch(ts), batch(is_), batch(tt), batch(it))
    assert out.value == 0.0
    for g in out.grads.values():
        assert np.max(np.abs(g)) == 0.0


def test_bad_weights_rejected():
    cell = (LearningType.INTRA_TCH_STU, Strategy.FD)
    for w in (-1.0, float("nan"), float("inf")):
        with pytest.raises(ValueError):
            build_term(*cell, weight=w)


@pytest.mark.parametrize("lt,s", valid_cells(), ids=lambda v: getattr(v, "value", str(v)))
def test_teachers_never_receive_gradients(lt, s):
    rng = np.random.default_rng(400)
    ts, is_, tt, it = oracles.four_batches(rng, 4, 5)
    out = eval_cells([(lt, s)], ts, is_, tt, it, two_sided=True)
    assert set(out.grads) <= {"text_student", "image_student"}
    assert out.grads, f"cell ({lt.value}, {s.value}) moved no student at all"


def test_one_sided_targets_block_student_gradients():
    # The intra-student symmetric SD cell targets the image student; only
    # two_sided mode lets gradient flow into that side.
    rng = np.random.default_rng(401)
    ts, is_, tt, it = oracles.four_batches(rng, 4, 5)
    cell = (LearningType.INTRA_STU_STU, Strategy.SYM_SD)
    one = eval_cells([cell], ts, is_, tt, it)
    two = eval_cells([cell], ts, is_, tt, it, two_sided=True)
    assert set(one.grads) == {"text_student"}
    assert set(two.grads) == {"text_student", "image_student"}
    assert one.value == two.value


def test_grid_gradients_against_finite_differences():
    """Composite config covering all loss kinds, differentiated through the
    normalization, with two_sided terms so every dependence is live."""
    rng = np.random.default_rng(402)
    raw = {role: rng.standard_normal((4, 5)) for role in Role}
    ys = {role: l2_normalize_rows(raw[role]) for role in Role}
    cfg = ConaConfig(
        terms=(
            build_term(LearningType.INTRA_TCH_STU, Strategy.INFONCE),
            build_term(LearningType.INTER_STU_STU, Strategy.SD, two_sided=True),
            build_term(LearningType.INTER_TCH_STU, Strategy.SYM_KLDIV, two_sided=True),
            build_term(LearningType.INTRA_TCH_STU, Strategy.FD, weight=0.5),
        ),
        tau=0.2,
    )

    out = evaluate(cfg, *(batch(ys[r]) for r in Role))

    for target in (Role.TEXT_STUDENT, Role.IMAGE_STUDENT):
        def objective(raw_m, target=target):
            args = [
                batch(l2_normalize_rows(raw_m)) if r is target else batch(ys[r])
                for r in Role
            ]
            return evaluate(cfg, *args).value

        numeric = finite_diff_grad(objective, raw[target].copy())
        y = ys[target]
        g_y = out.grads[target.value]
        norms = np.linalg.norm(raw[target], axis=1, keepdims=True)
        analytic = (g_y - (g_y * y).sum(axis=1, keepdims=True) * y) / norms
        report = compare_grads(analytic, numeric)
        assert report.ok(1e-4), (target, report)


def test_symmetric_cells_are_modality_swap_invariant():
    rng = np.random.default_rng(403)
    ts, is_, tt, it = oracles.four_batches(rng, 5, 6)
    cells = [
        (LearningType.INTRA_TCH_STU, Strategy.SYM_SD),
        (LearningType.INTRA_TCH_STU, Strategy.SYM_KLDIV),
        (LearningType.INTER_TCH_STU, Strategy.SYM_SD),
        (LearningType.INTER_TCH_STU, Strategy.SYM_KLDIV),
    ]
    for lt, s in cells:
        orig = eval_cells([(lt, s)], ts, is_, tt, it).value
        swapped = eval_cells([(lt, s)], is_, ts, it, tt).value
        assert abs(orig - swapped) <= 1e-15, (lt, s)


def test_duplicate_terms_get_distinct_component_keys():
    rng = np.random.default_rng(404)
    ts, is_, tt, it = oracles.four_batches(rng, 3, 4)
    term = build_term(LearningType.INTRA_TCH_STU, Strategy.INFONCE)
    half = build_term(LearningType.INTRA_TCH_STU, Strategy.INFONCE, weight=0.5)
    cfg = ConaConfig(terms=(term, half), tau=TAU)
    out = evaluate(cfg, batch(ts), batch(is_), batch(tt), batch(it))
    assert set(out.components) == {"IntraTchStu/InfoNCE", "IntraTchStu/InfoNCE#1"}
    assert abs(out.components["IntraTchStu/InfoNCE#1"] - 0.5 * out.components["IntraTchStu/InfoNCE"]) <= 1e-12


def test_evaluate_requires_shared_batch_size():
    rng = np.random.default_rng(405)
    ts, is_, tt, _ = oracles.four_batches(rng, 4, 5)
    it = oracles.unit_rows(rng, 3, 5)
    with pytest.raises(ShapeMismatch):
        eval_cells([(LearningType.INTRA_TCH_STU, Strategy.INFONCE)], ts, is_, tt, it)


# --- JSON configuration ---------------------------------------------------------


def test_config_json_round_trip():
    cfg = ConaConfig(
        terms=(
            build_term(LearningType.INTER_STU_STU, Strategy.SD, weight=2.0, two_sided=True),
            build_term(LearningType.INTER_TCH_STU, Strategy.KLDIV, reverse_kl=True),
        ),
        tau=0.09,
        deterministic=True,
    )
    text = config_to_json(cfg)
    back = config_from_json(text)
    assert back == cfg
    # canonical form: parse and re-serialize is stable
    assert config_to_json(back) == text
    doc = json.loads(text)
    assert set(doc) == {"terms", "tau", "deterministic"}
    assert set(doc["terms"][0]) == {"learning_type", "strategy", "weight", "two_sided", "reverse_kl"}


def test_config_json_defaults():
    cfg = config_from_json(
        '{"terms": [{"learning_type": "IntraTchStu", "strategy": "InfoNCE"}]}'
    )
    assert cfg.tau == 0.07
    assert cfg.deterministic is False
    term = cfg.terms[0]
    assert term.weight == 1.0 and not term.two_sided and not term.reverse_kl


@pytest.mark.parametrize(
    "text,needle",
    [
        ("not json", "not valid JSON"),
        ("[]", "JSON object"),
        ('{"terms": []}', "non-empty"),
        ('{"terms": [{}]}', "learning_type"),
        ('{"terms": [{"learning_type": "IntraTchStu"}]}', "strategy"),
        ('{"terms": [{"learning_type": "Nope", "strategy": "SD"}]}', "Nope"),
        ('{"terms": [{"learning_type": "IntraTchStu", "strategy": "Nope"}]}', "Nope"),
        ('{"terms": [{"learning_type": "IntraTchStu", "strategy": "SD", "extra": 1}]}', "extra"),
        ('{"terms": [{"learning_type": "IntraTchStu", "strategy": "SD"}], "typo": 1}', "typo"),
    ],
)
def test_config_json_rejects_malformed_documents(text, needle):
    with pytest.raises(ValueError) as err:
        config_from_json(text)
    assert needle in str(err.value)


def test_config_json_rejects_excluded_cell():
    with pytest.raises(MeaninglessCombination):
        config_from_json(
            '{"terms": [{"learning_type": "IntraStuStu", "strategy": "InfoNCE"}]}'
        )


def test_config_rejects_bad_tau():
    with pytest.raises(ValueError):
        ConaConfig(terms=(build_term(LearningType.INTRA_TCH_STU, Strategy.FD),), tau=0.0)
