from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from cardioagent.corpus import Chunk, ChunkingConfig, ChunkStore
from cardioagent.errors import EmptyChunk, EmptyQuery, InvalidConfig
from cardioagent.keyword_filter import (
    FilterConfig,
    MedicalVocabulary,
    QueryKeywords,
    filter_candidates,
    first_position,
    load_stopwords,
    medical_weight,
    position_bonus,
    score_chunk,
    term_frequency,
    tokenize,
)
from cardioagent.vector_index import ScoredCandidate
from oracles import oracle_score, oracle_tokens

CFG = FilterConfig(chunk_size=100)


def chunk(text, cid="d#1"):
    return Chunk(cid, "d", 1, 0, text)


class TestTerms:
    def test_tokenize(self):
        assert tokenize("NT-proBNP, 4300 pg/mL!") == ["nt", "probnp", "4300", "pg", "ml"]

    @settings(max_examples=100, deadline=None)
    @given(st.text(alphabet="abcXYZ12 ,.-_/", max_size=80))
    def test_tokenize_matches_oracle(self, text):
        assert tokenize(text) == oracle_tokens(text)

    def test_tf(self):
        assert term_frequency("bnp", chunk("BNP high, bnp rising, troponin flat")) == pytest.approx(2 / 6)
        assert term_frequency("ecg", chunk("BNP high")) == 0.0

    def test_tf_empty_chunk(self):
        with pytest.raises(EmptyChunk):
            term_frequency("bnp", chunk("  ... "))

    def test_medical_weight_piecewise(self):
        vocab = MedicalVocabulary({"bnp": 2.5})
        assert medical_weight("bnp", vocab) == 2.5
        assert medical_weight("the", vocab) == 1.0

    @pytest.mark.parametrize("w", [0.5, float("nan"), float("inf")])
    def test_vocab_weights_at_least_one(self, w):
        with pytest.raises(InvalidConfig):
            MedicalVocabulary({"x": w})

    def test_builtin_vocab_and_stopwords(self):
        vocab = MedicalVocabulary.load()
        assert len(vocab) > 10 and all(w >= 1 for w in vocab.weights.values())
        stop = load_stopwords()
        assert "the" in stop and "heart" not in stop

    def test_position_bonus_boundary(self):
        """pos = 0.3*d_s gets no bonus; one character earlier does."""
        at = chunk("x" * 29 + " bnp")  # first 'bnp' at offset 30
        before = chunk("x" * 28 + " bnp")  # offset 29
        assert first_position("bnp", at) == 30
        assert position_bonus("bnp", at, CFG) == 1.0
        assert position_bonus("bnp", before, CFG) == 1.2
        assert position_bonus("ecg", before, CFG) == 1.0

    def test_position_is_token_not_substring(self):
        assert first_position("bnp", chunk("ntbnp then bnp")) == 11


class TestScore:
    def test_worked_example(self):
        """TF 0.2 in a 10-token chunk, MW 2, leading position: 0.2*2*1.2 = 0.48."""
        c = chunk("bnp bnp a b c d e f g h")
        s = score_chunk(c, QueryKeywords(("bnp",)), MedicalVocabulary({"bnp": 2.0}), CFG)
        assert s.score == pytest.approx(0.48, abs=1e-12)

    def test_average_over_keywords(self):
        c = chunk("bnp bnp a b c d e f g h")
        s = score_chunk(c, QueryKeywords(("bnp", "zzz")), MedicalVocabulary({"bnp": 2.0}), CFG)
        assert s.score == pytest.approx(0.24, abs=1e-12)
        assert [t.keyword for t in s.breakdown] == ["bnp", "zzz"]
        assert s.breakdown[1].tf == 0 and s.breakdown[1].pb == 1.0

    def test_empty_query(self):
        with pytest.raises(EmptyQuery):
            score_chunk(chunk("a b"), QueryKeywords(()), MedicalVocabulary({}), CFG)

    def test_keywords_dedupe_and_stopwords(self):
        kw = QueryKeywords.from_query("The BNP and the bnp level", {"the", "and"})
        assert kw.keywords == ("bnp", "level")

    @settings(max_examples=150, deadline=None)
    @given(
        st.lists(st.sampled_from("bnp ecg echo a the heart lv ef".split()), min_size=1, max_size=40),
        st.lists(st.sampled_from("bnp ecg heart zz".split()), min_size=1, max_size=4, unique=True),
        st.floats(1.0, 5.0),
    )
    def test_breakdown_recomputes_and_matches_oracle(self, words, kws, w):
        c = chunk(" ".join(words))
        vocab = MedicalVocabulary({"bnp": w, "heart": 1.5})
        s = score_chunk(c, QueryKeywords(tuple(kws)), vocab, CFG)
        assert s.recompute() == pytest.approx(s.score, abs=1e-9)
        assert s.score == pytest.approx(oracle_score(c.text, kws, vocab.weights, 100), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(1.0, 4.0), st.floats(0.0, 3.0))
    def test_monotone_in_weight(self, w, dw):
        c = chunk("bnp heart heart a b")
        kw = QueryKeywords(("bnp", "heart"))
        lo = score_chunk(c, kw, MedicalVocabulary({"bnp": w}), CFG).score
        hi = score_chunk(c, kw, MedicalVocabulary({"bnp": w + dw}), CFG).score
        assert hi >= lo - 1e-15

    def test_monotone_in_frequency(self):
        kw, vocab = QueryKeywords(("bnp",)), MedicalVocabulary({})
        scores = [score_chunk(chunk(" ".join(["bnp"] * k + ["x"] * (10 - k))), kw, vocab, CFG).score for k in range(11)]
        assert scores == sorted(scores)


def _store(texts):
    chunks = [Chunk(f"d#{i}", "d", i, 0, t) for i, t in enumerate(texts, start=1)]
    return ChunkStore(ChunkingConfig(100, 10), chunks, ["d"])


class TestFilter:
    def setup_method(self):
        self.store = _store(["bnp bnp bnp x", "x x x bnp", "x y z w", "bnp x x x"])
        self.cands = [ScoredCandidate(f"d#{i}", 1.0 - i / 10) for i in range(1, 5)]
        self.kw = QueryKeywords(("bnp",))
        self.vocab = MedicalVocabulary({})

    def test_threshold_and_truncate(self):
        out = filter_candidates(self.cands, self.store, self.kw, self.vocab, FilterConfig(threshold=0.25, chunk_size=100), 2)
        assert [r.chunk_id for r in out] == ["d#1", "d#2"]
        assert not any(r.backfilled for r in out)

    def test_threshold_is_strict(self):
        # d#2 and d#4 score exactly 0.25 * 1.2 == 0.3
        out = filter_candidates(self.cands, self.store, self.kw, self.vocab, FilterConfig(threshold=0.3, chunk_size=100), 3)
        assert [r.chunk_id for r in out] == ["d#1"]

    def test_score_ties_broken_by_cosine(self):
        out = filter_candidates(self.cands, self.store, self.kw, self.vocab, FilterConfig(threshold=0.0, chunk_size=1000), 4)
        # d#2 and d#4 both score 0.25*1.2; d#2 has the higher cosine
        assert [r.chunk_id for r in out] == ["d#1", "d#2", "d#4", "d#3"]

    def test_threshold_zero_is_pure_reranking(self):
        out = filter_candidates(self.cands, self.store, self.kw, self.vocab, FilterConfig(threshold=0.0, chunk_size=100), 2)
        assert len(out) == 2

    def test_backfill(self):
        cfg = FilterConfig(threshold=10.0, min_results=1, chunk_size=100)
        out = filter_candidates(self.cands, self.store, self.kw, self.vocab, cfg, 3)
        assert [r.chunk_id for r in out] == ["d#1"] and out[0].backfilled
        none = filter_candidates(self.cands, self.store, self.kw, self.vocab, FilterConfig(threshold=10.0, min_results=0), 3)
        assert none == []

    def test_errors(self):
        with pytest.raises(EmptyQuery):
            filter_candidates(self.cands, self.store, QueryKeywords(()), self.vocab, CFG, 3)
        with pytest.raises(InvalidConfig):
            filter_candidates(self.cands, self.store, self.kw, self.vocab, CFG, 0)
        with pytest.raises(InvalidConfig):
            FilterConfig(threshold=-0.1)

    def test_output_is_subset_of_candidates(self):
        rng = random.Random(3)
        for _ in range(20):
            cands = rng.sample(self.cands, rng.randint(1, 4))
            out = filter_candidates(cands, self.store, self.kw, self.vocab, FilterConfig(threshold=0.1), 2)
            assert {r.chunk_id for r in out} <= {c.chunk_id for c in cands}
            assert len(out) <= 2
