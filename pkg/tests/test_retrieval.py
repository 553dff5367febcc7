"""Exactness checks for the retrieval index against brute-force ranking."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cona.container import write_container
from cona.exceptions import (
    DuplicateId,
    EmptyIndex,
    IoError,
    NotNormalized,
    ShapeMismatch,
    UnknownGroundTruthId,
)
from cona.retrieval import build_index, load_index, recall_at_k, save_index, topk

import oracles


def gallery(seed: int, n: int, d: int):
    rng = np.random.default_rng(seed)
    emb = oracles.unit_rows(rng, n, d)
    ids = [f"item-{i:04d}" for i in range(n)]
    return ids, emb


def test_topk_matches_full_sort():
    """256-item gallery, many queries, every k: identical ids and scores
    to a complete sort."""
    ids, emb = gallery(11, 256, 16)
    index = build_index(ids, emb)
    rng = np.random.default_rng(111)
    for _ in range(20):
        q = oracles.unit_rows(rng, 1, 16)[0]
        want = oracles.brute_topk(ids, emb, q, 256)
        for k in (1, 3, 10, 256):
            got = topk(index, q, k)
            assert [g[0] for g in got] == [w[0] for w in want[:k]]
            assert np.allclose([g[1] for g in got], [w[1] for w in want[:k]], atol=1e-12)


def test_topk_tie_break_is_ascending_id():
    # Two items with literally identical embeddings: the smaller id wins.
    emb = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    index = build_index(["b", "a", "c"], emb)
    got = topk(index, [1.0, 0.0], 3)
    assert [g[0] for g in got] == ["a", "b", "c"]
    assert got[0][1] == got[1][1] == 1.0


def test_topk_k_larger_than_gallery():
    ids, emb = gallery(12, 5, 4)
    index = build_index(ids, emb)
    q = oracles.unit_rows(np.random.default_rng(1), 1, 4)[0]
    got = topk(index, q, 50)
    assert len(got) == 5
    assert [g[0] for g in got] == [w[0] for w in oracles.brute_topk(ids, emb, q, 5)]


def test_topk_argument_validation():
    ids, emb = gallery(13, 4, 3)
    index = build_index(ids, emb)
    with pytest.raises(ValueError):
        topk(index, [1.0, 0.0, 0.0], 0)
    with pytest.raises(ShapeMismatch):
        topk(index, [1.0, 0.0], 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 40), st.integers(2, 8))
def test_topk_property_matches_brute_force(seed, n, d):
    rng = np.random.default_rng(seed)
    emb = oracles.unit_rows(rng, n, d)
    ids = [f"g{i:03d}" for i in range(n)]
    index = build_index(ids, emb)
    q = oracles.unit_rows(rng, 1, d)[0]
    k = int(rng.integers(1, n + 1))
    got = topk(index, q, k)
    want = oracles.brute_topk(ids, emb, q, k)
    assert [g[0] for g in got] == [w[0] for w in want]


# --- recall -------------------------------------------------------------------


def test_recall_matches_brute_force():
    ids, emb = gallery(12, 64, 8)
    index = build_index(ids, emb)
    rng = np.random.default_rng(121)
    queries = oracles.unit_rows(rng, 32, 8)
    truth = [ids[int(rng.integers(0, 64))] for _ in range(32)]
    report = recall_at_k(index, queries, truth, ks=(1, 5, 10, 64))
    want = oracles.brute_recall(ids, emb, queries, truth, (1, 5, 10, 64))
    assert report.num_queries == 32
    for k, v in want.items():
        assert report.recalls[k] == v
    assert report.recalls[64] == 1.0  # the whole gallery always contains the truth


def test_recall_is_monotone_in_k():
    ids, emb = gallery(14, 40, 6)
    index = build_index(ids, emb)
    rng = np.random.default_rng(140)
    queries = oracles.unit_rows(rng, 25, 6)
    truth = [ids[int(rng.integers(0, 40))] for _ in range(25)]
    ks = (1, 2, 3, 5, 8, 13, 21, 34, 40)
    report = recall_at_k(index, queries, truth, ks=ks)
    values = [report.recalls[k] for k in ks]
    assert all(a <= b for a, b in zip(values, values[1:]))
    assert all(0.0 <= v <= 1.0 for v in values)


def test_recall_perfect_self_retrieval():
    ids, emb = gallery(15, 30, 5)
    index = build_index(ids, emb)
    report = recall_at_k(index, emb, ids, ks=(1,))
    assert report.recalls[1] == 1.0


def test_recall_validation():
    ids, emb = gallery(16, 6, 4)
    index = build_index(ids, emb)
    queries = emb[:3]
    with pytest.raises(ShapeMismatch):
        recall_at_k(index, queries, ids[:2], ks=(1,))
    with pytest.raises(UnknownGroundTruthId):
        recall_at_k(index, queries, ["missing"] * 3, ks=(1,))
    with pytest.raises(ValueError):
        recall_at_k(index, queries, ids[:3], ks=())
    with pytest.raises(ValueError):
        recall_at_k(index, queries, ids[:3], ks=(0,))


def test_recall_with_k_beyond_gallery_size():
    ids, emb = gallery(17, 4, 3)
    index = build_index(ids, emb)
    report = recall_at_k(index, emb, ids, ks=(1, 100))
    assert report.recalls[100] == 1.0


# --- index construction ---------------------------------------------------------


def test_build_index_validation():
    with pytest.raises(EmptyIndex):
        build_index([], np.zeros((0, 3)))
    ids, emb = gallery(18, 4, 3)
    with pytest.raises(ShapeMismatch):
        build_index(ids[:3], emb)
    with pytest.raises(DuplicateId):
        build_index(["a", "b", "a", "c"], emb)
    with pytest.raises(NotNormalized):
        build_index(ids, emb * 2.0)


def test_index_preserves_insertion_order():
    ids = ["z", "a", "m"]
    emb = np.eye(3)
    index = build_index(ids, emb)
    assert index.ids == ids
    assert index.size == 3 and index.dim == 3


# --- persistence -----------------------------------------------------------------


def test_index_round_trip(tmp_path):
    ids, emb = gallery(19, 12, 5)
    index = build_index(ids, emb)
    path = str(tmp_path / "gallery.cona")
    save_index(path, index)
    back = load_index(path)
    assert back.ids == index.ids
    assert np.array_equal(back.embeddings, index.embeddings)
    # queries agree after the round trip
    q = oracles.unit_rows(np.random.default_rng(190), 1, 5)[0]
    assert topk(back, q, 4) == topk(index, q, 4)


def test_load_index_rejects_contradictory_header(tmp_path):
    path = str(tmp_path / "broken.cona")
    write_container(
        path,
        {"kind": "index", "version": 1, "size": 3, "dim": 4, "ids": ["a", "b", "c"]},
        [("embeddings", np.eye(4)[:2])],
    )
    with pytest.raises(IoError):
        load_index(path)


def test_load_index_rejects_missing_block(tmp_path):
    path = str(tmp_path / "empty.cona")
    write_container(path, {"kind": "index", "version": 1, "size": 0, "dim": 4, "ids": []}, [])
    with pytest.raises(IoError):
        load_index(path)
