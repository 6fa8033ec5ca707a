"""Metric suite vs. exhaustive pure-Python oracles.

The oracles below re-rank with sorted() and count by hand; agreement is
asserted exactly (==) for the ranking metrics, matching the contract
that ranking only depends on order, never on float arithmetic.
"""

import numpy as np
import pytest
import scipy.stats

from cusa.errors import (
    DegenerateInput,
    EmptyGallery,
    InvalidConfig,
    OutOfRange,
    ShapeMismatch,
    UnknownId,
)
from cusa.mathops import l2_normalize_rows
from cusa.metrics import (
    RankedList,
    evaluate_cross_modal,
    evaluate_uni_modal,
    map_at_r,
    r_precision,
    rank_by_similarity,
    recall_at_k,
    rsum,
    spearman,
)

SPEARMAN_TIE_CASE = 0.9486832980505138  # x=(1,2,2,3) vs y=(1,2,3,4)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def oracle_order(row, exclude=None):
    idx = sorted(range(len(row)), key=lambda j: (-row[j], j))
    return [j for j in idx if j != exclude]


def oracle_recall(ranked_ids, rel, k):
    hits = sum(1 for qid, ids in ranked_ids if len(set(ids[:k]) & rel[qid]) > 0)
    return hits / len(ranked_ids)


def oracle_r_precision(ranked_ids, rel):
    vals = []
    for qid, ids in ranked_ids:
        r = len([g for g in ids if g in rel[qid]])
        vals.append(len([g for g in ids[:r] if g in rel[qid]]) / r)
    return sum(vals) / len(vals)


def oracle_map_at_r(ranked_ids, rel):
    vals = []
    for qid, ids in ranked_ids:
        r = len([g for g in ids if g in rel[qid]])
        hits, ap = 0, 0.0
        for rank, g in enumerate(ids[:r], start=1):
            if g in rel[qid]:
                hits += 1
                ap += hits / rank
        vals.append(ap / r)
    return sum(vals) / len(vals)


def random_instance(rng, with_ties=False):
    nq = int(rng.integers(2, 9))
    ng = int(rng.integers(3, 21))
    sims = rng.standard_normal((nq, ng))
    if with_ties:
        sims = np.round(sims, 1)
    query_ids = [f"q{i}" for i in range(nq)]
    gallery_ids = [f"g{j}" for j in range(ng)]
    rel = {}
    for qid in query_ids:
        n_rel = int(rng.integers(1, min(ng, 6) + 1))
        chosen = rng.choice(ng, size=n_rel, replace=False)
        rel[qid] = {gallery_ids[int(j)] for j in chosen}
        if rng.random() < 0.3:
            rel[qid].add("outside-the-gallery")  # must be ignored
    return sims, query_ids, gallery_ids, rel


# ---------------------------------------------------------------------------
# ranking
# ---------------------------------------------------------------------------

class TestRankBySimilarity:
    def test_orders_descending(self):
        ranked = rank_by_similarity([[0.1, 0.9, 0.5]], ["q"], ["a", "b", "c"])
        assert ranked.ranked_ids[0] == ["b", "c", "a"]

    def test_ties_break_by_gallery_index(self):
        ranked = rank_by_similarity([[0.5, 0.7, 0.5, 0.7]], ["q"], list("abcd"))
        assert ranked.ranked_ids[0] == ["b", "d", "a", "c"]

    def test_self_exclusion(self):
        sims = np.array([[1.0, 0.2], [0.2, 1.0]])
        ranked = rank_by_similarity(sims, ["a", "b"], ["a", "b"], exclude_self=True)
        assert ranked.ranked_ids == [["b"], ["a"]]

    def test_empty_gallery_rejected(self):
        with pytest.raises(EmptyGallery):
            rank_by_similarity([[1.0]], ["a"], ["a"], exclude_self=True)

    def test_id_count_mismatch(self):
        with pytest.raises(ShapeMismatch):
            rank_by_similarity([[1.0, 0.0]], ["a"], ["x"])

    def test_monotone_transform_leaves_ranking(self):
        rng = np.random.default_rng(12)
        sims = rng.standard_normal((4, 9))
        ids = [f"g{j}" for j in range(9)]
        base = rank_by_similarity(sims, list("abcd"), ids)
        warped = rank_by_similarity(np.exp(2.0 * sims) + 3.0, list("abcd"), ids)
        assert base.ranked_ids == warped.ranked_ids


class TestRecallAtK:
    def test_rank_boundaries(self):
        ranked = RankedList(["q"], [["x", "y", "z"]])
        rel = {"q": {"y"}}
        assert recall_at_k(ranked, rel, 1) == 0.0
        assert recall_at_k(ranked, rel, 2) == 1.0

    def test_perfect_retrieval(self):
        ranked = RankedList(["a", "b"], [["r1", "x"], ["r2", "x"]])
        assert recall_at_k(ranked, {"a": {"r1"}, "b": {"r2"}}, 1) == 1.0

    def test_monotone_in_k(self):
        rng = np.random.default_rng(44)
        sims, qids, gids, rel = random_instance(rng)
        ranked = rank_by_similarity(sims, qids, gids)
        values = [recall_at_k(ranked, rel, k) for k in range(1, len(gids) + 1)]
        assert all(a <= b for a, b in zip(values, values[1:]))

    def test_bad_k(self):
        with pytest.raises(OutOfRange):
            recall_at_k(RankedList(["q"], [["x"]]), {"q": {"x"}}, 0)

    def test_unknown_query(self):
        with pytest.raises(UnknownId):
            recall_at_k(RankedList(["q"], [["x"]]), {"other": {"x"}}, 1)


class TestRPrecisionAndMapAtR:
    def test_half_found(self):
        ranked = RankedList(["q"], [["rel1", "non", "rel2"]])
        rel = {"q": {"rel1", "rel2"}}
        assert r_precision(ranked, rel) == 0.5

    def test_perfect_prefix(self):
        ranked = RankedList(["q"], [["a", "b", "x", "y"]])
        rel = {"q": {"a", "b"}}
        assert r_precision(ranked, rel) == 1.0
        assert map_at_r(ranked, rel) == 1.0

    def test_map_spec_example(self):
        # R=2, relevant at ranks 1 and 3: the rank-3 hit is outside top-R
        ranked = RankedList(["q"], [["rel1", "non", "rel2"]])
        rel = {"q": {"rel1", "rel2"}}
        assert map_at_r(ranked, rel) == 0.5

    def test_no_relevant_in_gallery(self):
        ranked = RankedList(["q"], [["a", "b"]])
        with pytest.raises(DegenerateInput):
            r_precision(ranked, {"q": {"elsewhere"}})

    def test_map_bounded_by_r_precision(self):
        rng = np.random.default_rng(60)
        for _ in range(30):
            sims, qids, gids, rel = random_instance(rng)
            ranked = rank_by_similarity(sims, qids, gids)
            assert map_at_r(ranked, rel) <= r_precision(ranked, rel) + 1e-15


def test_ranking_metrics_match_oracles_exactly():
    rng = np.random.default_rng(2024)
    for trial in range(100):
        sims, qids, gids, rel = random_instance(rng, with_ties=(trial % 2 == 0))
        ranked = rank_by_similarity(sims, qids, gids)
        oracle_ranked = [(qid, [gids[j] for j in oracle_order(sims[i])])
                         for i, qid in enumerate(qids)]
        assert ranked.ranked_ids == [ids for _, ids in oracle_ranked]
        for k in (1, 5, 10):
            assert recall_at_k(ranked, rel, k) == oracle_recall(oracle_ranked, rel, k)
        assert r_precision(ranked, rel) == oracle_r_precision(oracle_ranked, rel)
        assert map_at_r(ranked, rel) == oracle_map_at_r(oracle_ranked, rel)


def test_uni_modal_self_exclusion_matches_oracle():
    rng = np.random.default_rng(81)
    for _ in range(40):
        n = int(rng.integers(3, 12))
        emb = l2_normalize_rows(rng.standard_normal((n, 5)))
        ids = [f"v{i}" for i in range(n)]
        rel = {ids[i]: {ids[int(j)] for j in rng.choice(n, size=2, replace=False)
                        if int(j) != i} or {ids[(i + 1) % n]}
               for i in range(n)}
        sims = emb @ emb.T
        got = evaluate_uni_modal(emb, ids, rel)
        oracle_ranked = [(ids[i], [ids[j] for j in oracle_order(sims[i], exclude=i)])
                         for i in range(n)]
        assert got["r_at_1"] == 100.0 * oracle_recall(oracle_ranked, rel, 1)


# ---------------------------------------------------------------------------
# rsum / spearman
# ---------------------------------------------------------------------------

class TestRsum:
    def test_published_rows(self):
        assert abs(rsum((57.3, 83.1, 90.3, 44.2, 72.7, 82.1)) - 429.7) < 1e-9
        assert abs(rsum((83.5, 96.3, 98.5, 66.2, 87.1, 92.2)) - 523.8) < 1e-9

    def test_zeros(self):
        assert rsum([0.0] * 6) == 0.0

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            rsum([57.3, 83.1, 90.3, 44.2, 72.7, 182.1])

    def test_wrong_length(self):
        with pytest.raises(ShapeMismatch):
            rsum([1.0, 2.0, 3.0])


class TestSpearman:
    def test_monotone(self):
        assert spearman((1, 2, 3), (10, 20, 30)) == 1.0
        assert spearman((1, 2, 3), (3, 2, 1)) == -1.0

    def test_tie_case_frozen(self):
        got = spearman((1, 2, 2, 3), (1, 2, 3, 4))
        assert abs(got - SPEARMAN_TIE_CASE) < 1e-12
        assert abs(got - 0.948683) < 1e-6

    def test_matches_scipy_with_and_without_ties(self):
        rng = np.random.default_rng(99)
        for trial in range(50):
            n = int(rng.integers(3, 40))
            x = rng.standard_normal(n)
            y = rng.standard_normal(n)
            if trial % 3 == 0:
                x = np.round(x, 1)
                y = np.round(y, 1)
                if np.all(x == x[0]) or np.all(y == y[0]):
                    continue
            want = scipy.stats.spearmanr(x, y).statistic
            assert abs(spearman(x, y) - want) < 1e-9

    def test_increasing_transform_invariance(self):
        rng = np.random.default_rng(31)
        x = rng.standard_normal(20)
        y = rng.standard_normal(20)
        assert abs(spearman(np.exp(x), y) - spearman(x, y)) < 1e-12

    def test_reversal_antisymmetry(self):
        rng = np.random.default_rng(32)
        x = rng.permutation(15).astype(float)  # no ties
        y = rng.standard_normal(15)
        assert abs(spearman(-x, y) + spearman(x, y)) < 1e-12

    def test_constant_input_rejected(self):
        with pytest.raises(DegenerateInput):
            spearman((1.0, 1.0, 1.0), (1.0, 2.0, 3.0))

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatch):
            spearman((1.0, 2.0), (1.0, 2.0, 3.0))


# ---------------------------------------------------------------------------
# report-level evaluation
# ---------------------------------------------------------------------------

class TestEvaluateCrossModal:
    def test_self_retrieval(self):
        rng = np.random.default_rng(70)
        emb = l2_normalize_rows(rng.standard_normal((6, 5)))
        ids = [f"p{i}" for i in range(6)]
        rel = {i: {i} for i in ids}
        report = evaluate_cross_modal(emb, emb, ids, ids, rel, rel)
        for direction in ("i2t", "t2i"):
            assert report[direction]["r_at_1"] == 100.0
            assert report[direction]["map_at_r"] == 1.0
            assert report[direction]["r_precision"] == 1.0
        assert report["rsum"] == 600.0

    def test_single_pair(self):
        emb = np.array([[1.0, 0.0]])
        report = evaluate_cross_modal(emb, emb, ["i"], ["t"], {"i": {"t"}}, {"t": {"i"}})
        assert report["rsum"] == 600.0
        assert report["i2t"]["map_at_r"] == 1.0

    def test_matches_composed_oracle(self):
        rng = np.random.default_rng(71)
        img = l2_normalize_rows(rng.standard_normal((20, 8)))
        txt = l2_normalize_rows(rng.standard_normal((20, 8)))
        img_ids = [f"i{k}" for k in range(20)]
        txt_ids = [f"t{k}" for k in range(20)]
        rel_i2t = {iid: {txt_ids[int(j)] for j in rng.choice(20, 3, replace=False)}
                   for iid in img_ids}
        rel_t2i = {tid: {img_ids[int(j)] for j in rng.choice(20, 3, replace=False)}
                   for tid in txt_ids}
        report = evaluate_cross_modal(img, txt, img_ids, txt_ids, rel_i2t, rel_t2i)
        sims = img @ txt.T
        fwd = [(img_ids[i], [txt_ids[j] for j in oracle_order(sims[i])])
               for i in range(20)]
        bwd = [(txt_ids[i], [img_ids[j] for j in oracle_order(sims.T[i])])
               for i in range(20)]
        assert report["i2t"]["r_at_1"] == 100.0 * oracle_recall(fwd, rel_i2t, 1)
        assert report["i2t"]["r_at_5"] == 100.0 * oracle_recall(fwd, rel_i2t, 5)
        assert report["t2i"]["r_at_10"] == 100.0 * oracle_recall(bwd, rel_t2i, 10)
        assert report["i2t"]["map_at_r"] == oracle_map_at_r(fwd, rel_i2t)
        assert report["t2i"]["r_precision"] == oracle_r_precision(bwd, rel_t2i)
        assert report["i2t"]["map_at_r_pct"] == 100.0 * report["i2t"]["map_at_r"]
        six = [report[d][f"r_at_{k}"] for d in ("i2t", "t2i") for k in (1, 5, 10)]
        assert report["rsum"] == rsum(six)


class TestEvaluateUniModal:
    def test_identical_embeddings_mutually_relevant(self):
        emb = np.array([[1.0, 0.0], [1.0, 0.0]])
        got = evaluate_uni_modal(emb, ["a", "b"], {"a": {"b"}, "b": {"a"}})
        assert got["r_at_1"] == 100.0

    def test_irrelevant_nearest_neighbor_scores_zero(self):
        emb = np.array([[1.0, 0.0], [0.9, np.sqrt(1 - 0.81)], [-1.0, 0.0]])
        rel = {"a": {"c"}, "b": {"a"}, "c": {"a"}}
        got = evaluate_uni_modal(emb, ["a", "b", "c"], rel)
        # a's nearest is b (irrelevant), b's nearest is a (relevant),
        # c's nearest is b (irrelevant)
        assert got["r_at_1"] == pytest.approx(100.0 / 3.0)


class TestThreading:
    def test_thread_count_invariance(self, monkeypatch):
        rng = np.random.default_rng(83)
        sims = np.round(rng.standard_normal((16, 12)), 1)  # big enough to fan out
        qids = [f"q{i}" for i in range(16)]
        gids = [f"g{j}" for j in range(12)]
        monkeypatch.delenv("CUSA_THREADS", raising=False)
        base = rank_by_similarity(sims, qids, gids)
        monkeypatch.setenv("CUSA_THREADS", "3")
        threaded = rank_by_similarity(sims, qids, gids)
        assert base.ranked_ids == threaded.ranked_ids

    def test_bad_thread_count(self, monkeypatch):
        monkeypatch.setenv("CUSA_THREADS", "zero")
        with pytest.raises(InvalidConfig):
            rank_by_similarity([[1.0, 0.0]], ["q"], ["a", "b"])
        monkeypatch.setenv("CUSA_THREADS", "0")
        with pytest.raises(InvalidConfig):
            rank_by_similarity([[1.0, 0.0]], ["q"], ["a", "b"])
