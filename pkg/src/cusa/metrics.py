"""Retrieval and similarity metrics over multi-positive relevance.

Rankings are deterministic: descending similarity with ties broken by
ascending gallery index (stable sort). Relevance sets are intersected
with the active gallery, so one relevance map can serve cross-modal and
uni-modal tasks at once. Per-query work may be spread over threads via
the CUSA_THREADS environment variable; aggregation is order-independent
so the thread count never changes a result.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateInput,
    EmptyGallery,
    InvalidConfig,
    OutOfRange,
    ShapeMismatch,
    UnknownId,
)
from .mathops import _as_matrix, check_normalized


@dataclass
class RankedList:
    """Per query: every gallery id, best match first."""

    query_ids: list
    ranked_ids: list


def _thread_count() -> int:
    raw = os.environ.get("CUSA_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise InvalidConfig(f"CUSA_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise InvalidConfig(f"CUSA_THREADS must be >= 1, got {n}")
    return n


def rank_by_similarity(scores, query_ids, gallery_ids, exclude_self: bool = False) -> RankedList:
    """Order the gallery for every query row of a similarity matrix.

    With exclude_self=True (uni-modal retrieval over one table) the
    matrix must be square and entry (i, i) is dropped from query i's
    ranking.
    """
    s = _as_matrix(scores, "scores")
    nq, ng = s.shape
    if len(query_ids) != nq or len(gallery_ids) != ng:
        raise ShapeMismatch(
            f"scores {s.shape} vs {len(query_ids)} queries / {len(gallery_ids)} gallery ids"
        )
    if exclude_self:
        if nq != ng:
            raise ShapeMismatch("self-exclusion needs a square score matrix")
        if ng < 2:
            raise EmptyGallery("gallery is empty after self-exclusion")
    elif ng < 1:
        raise EmptyGallery("gallery is empty")

    ranked = [None] * nq

    def fill(start, stop):
        for i in range(start, stop):
            order = np.argsort(-s[i], kind="stable")
            if exclude_self:
                ranked[i] = [gallery_ids[j] for j in order if j != i]
            else:
                ranked[i] = [gallery_ids[j] for j in order]

    threads = _thread_count()
    if threads == 1 or nq < 2 * threads:
        fill(0, nq)
    else:
        chunk = -(-nq // threads)
        bounds = [(lo, min(lo + chunk, nq)) for lo in range(0, nq, chunk)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: fill(*b), bounds))
    return RankedList(query_ids=list(query_ids), ranked_ids=ranked)


def _rel_for(rel, qid):
    try:
        return rel[qid]
    except KeyError:
        raise UnknownId(f"no relevance entry for query {qid!r}") from None


def recall_at_k(ranked: RankedList, rel, k: int) -> float:
    """Fraction of queries with at least one relevant id in the top k."""
    if k < 1:
        raise OutOfRange(f"k must be >= 1, got {k}")
    hits = 0
    for qid, ids in zip(ranked.query_ids, ranked.ranked_ids):
        rset = _rel_for(rel, qid)
        if any(g in rset for g in ids[:k]):
            hits += 1
    return hits / len(ranked.query_ids)


def r_precision(ranked: RankedList, rel) -> float:
    """Mean over queries of (relevant found in top-R) / R, R = number of
    relevant items present in the gallery."""
    total = 0.0
    for qid, ids in zip(ranked.query_ids, ranked.ranked_ids):
        rset = _rel_for(rel, qid)
        r = sum(1 for g in ids if g in rset)
        if r == 0:
            raise DegenerateInput(f"query {qid!r} has no relevant item in the gallery")
        found = sum(1 for g in ids[:r] if g in rset)
        total += found / r
    return total / len(ranked.query_ids)


def map_at_r(ranked: RankedList, rel) -> float:
    """Mean average precision restricted to the top-R ranks."""
    total = 0.0
    for qid, ids in zip(ranked.query_ids, ranked.ranked_ids):
        rset = _rel_for(rel, qid)
        r = sum(1 for g in ids if g in rset)
        if r == 0:
            raise DegenerateInput(f"query {qid!r} has no relevant item in the gallery")
        hits = 0
        ap = 0.0
        for rank, g in enumerate(ids[:r], start=1):
            if g in rset:
                hits += 1
                ap += hits / rank
        total += ap / r
    return total / len(ranked.query_ids)


def rsum(recalls) -> float:
    """Sum of the six recall percentages (R@1/5/10, both directions)."""
    values = [float(v) for v in recalls]
    if len(values) != 6:
        raise ShapeMismatch(f"rsum expects 6 recall values, got {len(values)}")
    for v in values:
        if not (0.0 <= v <= 100.0):
            raise OutOfRange(f"recall {v} outside [0, 100]")
    return float(sum(values))


def spearman(pred, gold) -> float:
    """Rank correlation: Pearson on fractional (average-tie) ranks."""
    x = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(gold, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeMismatch(f"lengths differ: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise DegenerateInput("need at least 2 observations")
    rx = _fractional_ranks(x)
    ry = _fractional_ranks(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    denom = np.sqrt((dx * dx).sum() * (dy * dy).sum())
    if denom == 0.0:
        raise DegenerateInput("constant input has no rank correlation")
    return float(np.clip((dx * dy).sum() / denom, -1.0, 1.0))


def _fractional_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their positions."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.shape[0], dtype=np.float64)
    i = 0
    n = x.shape[0]
    while i < n:
        j = i
        while j + 1 < n and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _direction_report(ranked: RankedList, rel) -> dict:
    rp = r_precision(ranked, rel)
    ap = map_at_r(ranked, rel)
    return {
        "r_at_1": 100.0 * recall_at_k(ranked, rel, 1),
        "r_at_5": 100.0 * recall_at_k(ranked, rel, 5),
        "r_at_10": 100.0 * recall_at_k(ranked, rel, 10),
        "r_precision": rp,
        "r_precision_pct": 100.0 * rp,
        "map_at_r": ap,
        "map_at_r_pct": 100.0 * ap,
    }


def evaluate_cross_modal(img_emb, txt_emb, img_ids, txt_ids, rel_i2t, rel_t2i) -> dict:
    """Both retrieval directions on shared rankings.

    Args:
        img_emb, txt_emb: normalized embedding matrices.
        img_ids, txt_ids: row ids, aligned with the matrices.
        rel_i2t: image query id -> relevant ids (intersected with the
            text gallery); rel_t2i analogous. The same co-membership
            map may be passed for both.

    Returns:
        {"i2t": {...}, "t2i": {...}, "rsum": float} with recalls in
        percent and R-P / mAP@R in both raw and percent form.
    """
    ie = _as_matrix(img_emb, "img_emb")
    te = _as_matrix(txt_emb, "txt_emb")
    check_normalized(ie, "img_emb")
    check_normalized(te, "txt_emb")
    sims = ie @ te.T
    ranked_i2t = rank_by_similarity(sims, img_ids, txt_ids)
    ranked_t2i = rank_by_similarity(sims.T, txt_ids, img_ids)
    i2t = _direction_report(ranked_i2t, rel_i2t)
    t2i = _direction_report(ranked_t2i, rel_t2i)
    total = rsum([i2t["r_at_1"], i2t["r_at_5"], i2t["r_at_10"],
                  t2i["r_at_1"], t2i["r_at_5"], t2i["r_at_10"]])
    return {"i2t": i2t, "t2i": t2i, "rsum": total}


def evaluate_uni_modal(emb, ids, rel) -> dict:
    """R@1 within one modality, the query itself excluded."""
    e = _as_matrix(emb, "emb")
    check_normalized(e, "emb")
    ranked = rank_by_similarity(e @ e.T, ids, ids, exclude_self=True)
    return {"r_at_1": 100.0 * recall_at_k(ranked, rel, 1)}
