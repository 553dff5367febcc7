"""Exact cosine-similarity retrieval over unit-norm embeddings.

Scores are plain dot products (rows are unit norm, so this is cosine).
Top-k is exact: full ranking by descending score with ties broken by
ascending id, no approximation anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import read_container, write_container
from .exceptions import DuplicateId, EmptyIndex, IoError, ShapeMismatch, UnknownGroundTruthId
from .validation import as_matrix, check_unit_rows


@dataclass
class RetrievalIndex:
    """Gallery of (id, embedding) items; order of insertion is preserved."""

    ids: list[str]
    embeddings: np.ndarray
    # Rank of each row in ascending-id order, used for deterministic ties.
    _id_rank: np.ndarray = None  # type: ignore[assignment]

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])


def build_index(ids: list[str], embeddings) -> RetrievalIndex:
    """Build an index from unique ids and matching unit-norm rows."""
    if len(ids) == 0:
        raise EmptyIndex("cannot build an index with no items")
    m = as_matrix(embeddings, "index embeddings")
    if m.shape[0] != len(ids):
        raise ShapeMismatch(f"{len(ids)} ids but {m.shape[0]} embedding rows")
    check_unit_rows(m, name="index embeddings")
    ids = [str(i) for i in ids]
    if len(set(ids)) != len(ids):
        seen: set[str] = set()
        dup = next(i for i in ids if i in seen or seen.add(i))
        raise DuplicateId(f"id {dup!r} appears more than once")
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    rank = np.empty(len(ids), dtype=np.int64)
    rank[order] = np.arange(len(ids))
    return RetrievalIndex(ids=ids, embeddings=m, _id_rank=rank)


def _ranked_order(index: RetrievalIndex, scores: np.ndarray) -> np.ndarray:
    # lexsort uses the last key as primary: descending score, then
    # ascending id for equal scores.
    return np.lexsort((index._id_rank, -scores))


def topk(index: RetrievalIndex, query, k: int) -> list[tuple[str, float]]:
    """The k highest-scoring items for one query vector.

    Asking for more items than the gallery holds returns the whole gallery,
    still fully ranked.
    """
    if index.size == 0:
        raise EmptyIndex("index holds no items")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.dim:
        raise ShapeMismatch(f"query dim {q.shape[0]} != index dim {index.dim}")
    scores = index.embeddings @ q
    order = _ranked_order(index, scores)[: min(k, index.size)]
    return [(index.ids[i], float(scores[i])) for i in order]


@dataclass(frozen=True)
class RecallReport:
    """Recall@k over a batch of queries, for each requested k."""

    recalls: dict[int, float]
    num_queries: int


def recall_at_k(
    index: RetrievalIndex,
    queries,
    ground_truth: list[str],
    ks: tuple[int, ...] = (1, 5, 10),
) -> RecallReport:
    """Fraction of queries whose true item ranks inside the top k.

    Args:
        queries: (Q, dim) unit-norm query embeddings.
        ground_truth: the correct gallery id per query row.
        ks: cutoffs to report; each must be >= 1.

    Raises:
        UnknownGroundTruthId: if any expected id is not in the gallery.
    """
    q = as_matrix(queries, "queries")
    if q.shape[0] != len(ground_truth):
        raise ShapeMismatch(f"{q.shape[0]} queries but {len(ground_truth)} ground-truth ids")
    if not ks or any(k < 1 for k in ks):
        raise ValueError(f"ks must be a non-empty tuple of positive ints, got {ks}")
    known = set(index.ids)
    for gid in ground_truth:
        if gid not in known:
            raise UnknownGroundTruthId(f"ground-truth id {gid!r} is not in the index")
    kmax = min(max(ks), index.size)
    all_scores = index.embeddings @ q.T
    hits = {k: 0 for k in ks}
    for col, gid in enumerate(ground_truth):
        order = _ranked_order(index, all_scores[:, col])[:kmax]
        retrieved = [index.ids[i] for i in order]
        for k in ks:
            if gid in retrieved[: min(k, kmax)]:
                hits[k] += 1
    n = q.shape[0]
    return RecallReport(recalls={k: hits[k] / n for k in ks}, num_queries=n)


def save_index(path: str, index: RetrievalIndex) -> None:
    header = {
        "kind": "index",
        "version": 1,
        "size": index.size,
        "dim": index.dim,
        "ids": index.ids,
    }
    write_container(path, header, [("embeddings", index.embeddings)])


def load_index(path: str) -> RetrievalIndex:
    header, blocks = read_container(path, expected_kind="index")
    if "embeddings" not in blocks:
        raise IoError(f"{path} is missing the embeddings block")
    ids = [str(i) for i in header.get("ids", [])]
    emb = blocks["embeddings"]
    if emb.shape != (header["size"], header["dim"]) or len(ids) != header["size"]:
        raise IoError(f"{path}: embeddings shape {emb.shape} contradicts header")
    return build_index(ids, emb)
