"""BM25 index, dense cosine search, hybrid fusion, and index persistence."""

import json
import math

import numpy as np
import pytest

from budgetrank.corpus import Corpus, Document
from budgetrank.errors import ValidationError
from budgetrank.expansion import ExpandedQuery
from budgetrank.retrieval import (
    bm25_rank,
    bm25_score,
    build_bm25,
    dense_scores,
    hybrid_retrieve,
    load_index,
    rrf_fuse,
    save_index,
    weighted_fuse,
)

from conftest import unit_vector


def make_corpus(texts: dict[str, str], embeddings: dict[str, list[float]] | None = None) -> Corpus:
    from budgetrank.corpus import tokenize

    embeddings = embeddings or {}
    docs = {}
    for doc_id, text in texts.items():
        emb = embeddings.get(doc_id)
        docs[doc_id] = Document(
            id=doc_id,
            text=text,
            token_count=len(tokenize(text)),
            embedding=None if emb is None else np.asarray(emb, dtype=float),
        )
    return Corpus(documents=docs)


def make_query(text: str, embedding=None, query_id="q1") -> ExpandedQuery:
    from budgetrank.corpus import tokenize

    return ExpandedQuery(
        original_text=text,
        original_terms=tuple(tokenize(text)),
        combined_embedding=None if embedding is None else np.asarray(embedding, dtype=float),
        query_id=query_id,
    )


class TestBuildBm25:
    def test_statistics(self):
        corpus = make_corpus({"d1": "a b", "d2": "a", "d3": "a b c"})
        index = build_bm25(corpus)
        assert index.doc_count == 3
        assert index.avg_doc_length == pytest.approx((2 + 1 + 3) / 3)

    def test_postings_for_single_doc(self):
        corpus = make_corpus({"d1": "a b"})
        index = build_bm25(corpus)
        assert index.postings["a"] == [("d1", 1)]
        assert index.postings["b"] == [("d1", 1)]

    def test_rebuild_is_identical(self):
        corpus = make_corpus({"d1": "a b", "d2": "b c"})
        assert build_bm25(corpus) == build_bm25(corpus)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValidationError, match="empty"):
            build_bm25(Corpus(documents={}))


class TestBm25Score:
    def setup_method(self):
        self.corpus = make_corpus({"d1": "apple banana", "d2": "apple apple"})
        self.index = build_bm25(self.corpus)

    def test_absent_term_scores_zero(self):
        assert bm25_score(self.index, ["kiwi"], "d1") == 0.0

    def test_hand_computed_value(self):
        # N=2, df(apple)=2 -> idf = ln(1 + 0.5/2.5); avgdl = 2.
        # d2: tf=2, dl=2 -> denom = 2 + 1.2*(0.25 + 0.75*1) = 3.2
        idf = math.log(1.0 + (2 - 2 + 0.5) / (2 + 0.5))
        expected = idf * 2 * (1.2 + 1.0) / (2 + 1.2 * (1 - 0.75 + 0.75 * 2 / 2))
        assert bm25_score(self.index, ["apple"], "d2") == pytest.approx(expected, rel=1e-12)

    def test_tf_ordering_at_equal_length(self):
        assert bm25_score(self.index, ["apple"], "d1") < bm25_score(self.index, ["apple"], "d2")

    def test_unknown_doc_rejected(self):
        with pytest.raises(ValidationError, match="nope"):
            bm25_score(self.index, ["apple"], "nope")

    def test_monotone_in_term_frequency(self):
        # Same doc length, increasing tf of the query term.
        corpus = make_corpus({
            "d1": "x a b c",
            "d2": "x x b c",
            "d3": "x x x c",
        })
        index = build_bm25(corpus)
        scores = [bm25_score(index, ["x"], d) for d in ("d1", "d2", "d3")]
        assert scores[0] < scores[1] < scores[2]

    def test_repeated_query_terms_accumulate(self):
        single = bm25_score(self.index, ["apple"], "d1")
        double = bm25_score(self.index, ["apple", "apple"], "d1")
        assert double == pytest.approx(2 * single)

    def test_rank_agrees_with_score(self):
        ranked = bm25_rank(self.index, ["apple", "banana"], 10)
        for doc_id, score in ranked:
            assert score == bm25_score(self.index, ["apple", "banana"], doc_id)


class TestDenseScores:
    def test_identical_embedding_gives_one(self):
        corpus = make_corpus({"d1": "t"}, {"d1": [1.0, 0.0]})
        scores = dense_scores(np.array([1.0, 0.0]), corpus)
        assert scores["d1"] == pytest.approx(1.0)

    def test_orthogonal_gives_zero(self):
        corpus = make_corpus({"d1": "t"}, {"d1": [0.0, 1.0]})
        scores = dense_scores(np.array([1.0, 0.0]), corpus)
        assert scores["d1"] == pytest.approx(0.0)

    def test_hand_dot_product(self):
        corpus = make_corpus({"d1": "t"}, {"d1": [0.6, 0.8]})
        scores = dense_scores(np.array([1.0, 0.0]), corpus)
        assert scores["d1"] == pytest.approx(0.6)

    def test_skips_unembedded_documents(self):
        corpus = make_corpus({"d1": "t", "d2": "t"}, {"d1": [1.0, 0.0]})
        scores = dense_scores(np.array([1.0, 0.0]), corpus)
        assert set(scores) == {"d1"}

    def test_dimension_mismatch_rejected(self):
        corpus = make_corpus({"d1": "t"}, {"d1": [1.0, 0.0]})
        with pytest.raises(ValidationError, match="dimension"):
            dense_scores(np.array([1.0, 0.0, 0.0]), corpus)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(11)
        dim = 16
        embeddings = {f"d{i}": unit_vector(rng, dim) for i in range(40)}
        corpus = make_corpus(
            {doc_id: "t" for doc_id in embeddings},
            {doc_id: list(vec) for doc_id, vec in embeddings.items()},
        )
        for _ in range(20):
            query = unit_vector(rng, dim)
            scores = dense_scores(query, corpus)
            for doc_id, vec in embeddings.items():
                oracle = sum(float(a) * float(b) for a, b in zip(corpus.get(doc_id).embedding, query))
                assert abs(scores[doc_id] - oracle) < 1e-9
                assert -1.0 <= scores[doc_id] <= 1.0


class TestFusion:
    def test_rrf_rank_one_in_both_lists(self):
        fused = rrf_fuse([[("d1", 9.0), ("d2", 5.0)], [("d1", 0.9), ("d3", 0.5)]])
        assert fused["d1"] == pytest.approx(2 / 61)
        assert fused["d2"] == pytest.approx(1 / 62)
        assert max(fused, key=fused.get) == "d1"

    def test_rrf_single_list_rank_one(self):
        fused = rrf_fuse([[("d1", 3.0)]])
        assert fused["d1"] == pytest.approx(1 / 61)

    def test_rrf_dominance(self):
        # Strictly better in both lists -> strictly higher fused score.
        rng = np.random.default_rng(3)
        for _ in range(100):
            ids = [f"d{i}" for i in range(6)]
            perm_a = list(rng.permutation(ids))
            perm_b = list(rng.permutation(ids))
            list_a = [(d, float(10 - i)) for i, d in enumerate(perm_a)]
            list_b = [(d, float(10 - i)) for i, d in enumerate(perm_b)]
            fused = rrf_fuse([list_a, list_b])
            for x in ids:
                for y in ids:
                    if x == y:
                        continue
                    if perm_a.index(x) < perm_a.index(y) and perm_b.index(x) < perm_b.index(y):
                        assert fused[x] > fused[y]

    def test_weighted_fuse_min_max(self):
        fused = weighted_fuse([("d1", 10.0), ("d2", 0.0)], [("d2", 1.0), ("d1", 0.0)], 0.25)
        assert fused["d1"] == pytest.approx(0.75 * 1.0 + 0.25 * 0.0)
        assert fused["d2"] == pytest.approx(0.75 * 0.0 + 0.25 * 1.0)


class TestHybridRetrieve:
    def setup_method(self):
        self.corpus = make_corpus(
            {"d1": "apple banana", "d2": "apple apple", "d3": "cherry pie"},
            {"d1": [1.0, 0.0], "d2": [0.0, 1.0], "d3": [0.6, 0.8]},
        )
        self.index = build_bm25(self.corpus)

    def test_n_below_one_rejected(self):
        query = make_query("apple")
        with pytest.raises(ValidationError, match="n"):
            hybrid_retrieve(query, self.index, self.corpus, 0)

    def test_no_embeddings_equals_bm25_ranking(self):
        corpus = make_corpus({"d1": "apple banana", "d2": "apple apple", "d3": "cherry"})
        index = build_bm25(corpus)
        query = make_query("apple")
        result = hybrid_retrieve(query, index, corpus, 3)
        bm25_order = [doc_id for doc_id, _ in bm25_rank(index, ["apple"], 3)]
        assert result.doc_ids() == bm25_order

    def test_doc_in_one_list_only(self):
        # d3 shares no query term: it appears only in the dense list.
        query = make_query("apple", embedding=[0.6, 0.8])
        result = hybrid_retrieve(query, self.index, self.corpus, 3)
        fused = dict(zip(result.doc_ids(), (s for _, s in result.candidates)))
        # dense ranking: d3 (cos 1.0) > d2 (0.8) > d1 (0.6)
        # bm25 ranking: d2 > d1 (d3 absent)
        assert fused["d3"] == pytest.approx(1 / 61)
        assert fused["d2"] == pytest.approx(1 / 61 + 1 / 62)

    def test_sorted_unique_and_capped(self):
        query = make_query("apple banana cherry", embedding=[1.0, 0.0])
        result = hybrid_retrieve(query, self.index, self.corpus, 2)
        assert len(result) <= 2
        ids = result.doc_ids()
        assert len(set(ids)) == len(ids)
        scores = [s for _, s in result.candidates]
        assert scores == sorted(scores, reverse=True)

    def test_expansion_terms_reach_bm25(self):
        from budgetrank.expansion import ScoredTerm

        query = ExpandedQuery(
            original_text="banana",
            original_terms=("banana",),
            expansion_terms=(ScoredTerm("cherry", 0.9),),
            query_id="q1",
        )
        result = hybrid_retrieve(query, self.index, self.corpus, 3)
        assert "d3" in result.doc_ids()

    def test_weighted_mode(self):
        query = make_query("apple", embedding=[0.6, 0.8])
        result = hybrid_retrieve(
            query, self.index, self.corpus, 3, fusion_mode="weighted", dense_weight=1.0
        )
        assert result.doc_ids()[0] == "d3"

    def test_unknown_fusion_mode_rejected(self):
        query = make_query("apple")
        with pytest.raises(ValidationError, match="fusion.mode"):
            hybrid_retrieve(query, self.index, self.corpus, 3, fusion_mode="mystery")


class TestIndexPersistence:
    def test_round_trip_byte_identical(self, tmp_path):
        corpus = make_corpus({"d1": "apple banana", "d2": "apple apple cherry"})
        index = build_bm25(corpus)
        first = tmp_path / "first.json"
        second = tmp_path / "second.json"
        save_index(index, first)
        save_index(load_index(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_loaded_index_scores_identically(self, tmp_path):
        corpus = make_corpus({"d1": "apple banana", "d2": "apple apple"})
        index = build_bm25(corpus)
        path = tmp_path / "index.json"
        save_index(index, path)
        loaded = load_index(path)
        assert bm25_score(loaded, ["apple"], "d2") == bm25_score(index, ["apple"], "d2")

    def test_versioned_header_checked(self, tmp_path):
        path = tmp_path / "index.json"
        path.write_text(json.dumps({"format": "other", "version": 1}), encoding="utf-8")
        with pytest.raises(ValidationError, match="format"):
            load_index(path)
