from __future__ import annotations

import io
import json
import math

import numpy as np
import pytest

from valuedec.dataset import (
    BagOfTokensEmbedder,
    BidwordImpression,
    LogRecord,
    SyntheticSpec,
    extract_pairs,
    filter_relevant,
    format_sft_tasks,
    gen_synthetic,
    read_records_jsonl,
    relevance,
    token_overlap,
    truncate_by_value,
    write_records_jsonl,
)


class TableEmbedder:
    """Fixed-vector embedder for hand-computed fixtures."""

    name = "table"

    def __init__(self, table):
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}

    def embed(self, text):
        return self.table[text]


def record(query, *bidwords):
    return LogRecord(
        query,
        tuple(BidwordImpression(t, e, c) for t, e, c in bidwords),
    )


class TestExtractPairs:
    def test_top_mode_takes_first(self):
        r = record("q", ("a", 5.0, False), ("b", 9.0, True), ("c", 1.0, True))
        assert extract_pairs([r]) == [("q", "a", 5.0)]

    def test_empty_bidword_list_yields_nothing(self):
        assert extract_pairs([record("q")]) == []

    def test_clicked_mode_takes_all_clicked(self):
        r = record("q", ("a", 5.0, False), ("b", 9.0, True), ("c", 1.0, True))
        assert extract_pairs([r], mode="clicked") == [("q", "b", 9.0), ("q", "c", 1.0)]

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            extract_pairs([], mode="everything")


class TestRelevance:
    def test_identical_text_is_one(self):
        emb = BagOfTokensEmbedder()
        assert relevance("red shoes", "red shoes", emb) == pytest.approx(1.0)

    def test_disjoint_tokens_are_orthogonal(self):
        emb = BagOfTokensEmbedder()
        assert relevance("red shoes", "blue hat", emb) == pytest.approx(0.0)

    def test_hand_built_three_dim_fixture(self):
        emb = TableEmbedder({"x": (1.0, 1.0, 0.0), "y": (1.0, 0.0, 0.0)})
        assert relevance("x", "y", emb) == pytest.approx(1.0 / math.sqrt(2.0), rel=1e-12)

    def test_symmetry(self):
        emb = BagOfTokensEmbedder()
        a = relevance("red shoes outdoor", "red hat", emb)
        b = relevance("red hat", "red shoes outdoor", emb)
        assert a == pytest.approx(b, rel=1e-12)
        assert 0.0 < a < 1.0

    def test_empty_text_rejected(self):
        with pytest.raises(ValueError):
            relevance("", "x", BagOfTokensEmbedder())

    def test_zero_norm_embedding_rejected(self):
        emb = TableEmbedder({"x": (0.0, 0.0), "y": (1.0, 0.0)})
        with pytest.raises(ValueError, match="zero-norm"):
            relevance("x", "y", emb)

    def test_range(self):
        emb = BagOfTokensEmbedder()
        rng = np.random.default_rng(0)
        words = [f"w{i}" for i in range(20)]
        for _ in range(50):
            x = " ".join(rng.choice(words, size=3))
            y = " ".join(rng.choice(words, size=4))
            assert -1.0 <= relevance(x, y, emb) <= 1.0


class TestFilterRelevant:
    def test_keep_all_at_minus_one(self):
        emb = BagOfTokensEmbedder()
        pairs = [("red shoes", "red boots", 1.0), ("red shoes", "blue hat", 2.0)]
        assert filter_relevant(pairs, -1.0, emb) == pairs

    def test_keep_none_at_one(self):
        emb = BagOfTokensEmbedder()
        pairs = [("red shoes", "red shoes", 1.0)]  # relevance exactly 1, strict >
        assert filter_relevant(pairs, 1.0, emb) == []

    def test_matches_per_pair_oracle(self):
        emb = BagOfTokensEmbedder()
        rng = np.random.default_rng(1)
        words = [f"w{i}" for i in range(12)]
        pairs = []
        for _ in range(80):
            x = " ".join(rng.choice(words, size=2, replace=False))
            y = " ".join(rng.choice(words, size=3, replace=False))
            pairs.append((x, y, float(rng.uniform(0, 5))))
        tau = 0.3
        got = filter_relevant(pairs, tau, emb)
        expected = [p for p in pairs if relevance(p[0], p[1], emb) > tau]
        assert got == expected

    def test_idempotent_and_subset(self):
        emb = BagOfTokensEmbedder()
        pairs = [
            ("red shoes", "red boots", 1.0),
            ("red shoes", "blue hat", 2.0),
            ("red shoes", "red shoes size 9", 3.0),
        ]
        once = filter_relevant(pairs, 0.2, emb)
        assert set(once) <= set(pairs)
        assert filter_relevant(once, 0.2, emb) == once

    def test_tau_validated(self):
        with pytest.raises(ValueError):
            filter_relevant([], 1.5, BagOfTokensEmbedder())


class TestTruncate:
    def test_short_lists_unchanged(self):
        data = {"q": [("a", 1.0), ("b", 3.0), ("c", 2.0)]}
        out = truncate_by_value(data, 50)
        assert out["q"] == [("b", 3.0), ("c", 2.0), ("a", 1.0)]

    def test_top_k_by_value_survive(self):
        rng = np.random.default_rng(2)
        bidwords = [(f"b{i:03d}", float(rng.uniform(0, 100))) for i in range(60)]
        out = truncate_by_value({"q": bidwords}, 50)["q"]
        assert len(out) == 50
        expected = sorted(bidwords, key=lambda bw: (-bw[1], bw[0]))[:50]
        assert out == expected
        values = [v for _, v in out]
        assert values == sorted(values, reverse=True)

    def test_ties_keep_lexicographic_prefix(self):
        data = {"q": [("zeta", 5.0), ("alpha", 5.0), ("mid", 5.0)]}
        out = truncate_by_value(data, 2)["q"]
        assert out == [("alpha", 5.0), ("mid", 5.0)]

    def test_never_grows_and_max_k_validated(self):
        data = {"q": [("a", 1.0)]}
        assert len(truncate_by_value(data, 3)["q"]) == 1
        with pytest.raises(ValueError):
            truncate_by_value(data, 0)


class TestSynthetic:
    SPEC = SyntheticSpec(
        vocab_size=100,
        n_queries=60,
        bidwords_per_query=8,
        seed=5,
        pool_per_topic=40,
    )

    def test_deterministic_under_seed(self):
        a_records, a_map = gen_synthetic(self.SPEC)
        b_records, b_map = gen_synthetic(self.SPEC)
        assert a_records == b_records
        assert a_map == b_map

    def test_sizes_honored_exactly(self):
        records, _ = gen_synthetic(self.SPEC)
        assert len(records) == 60
        assert all(len(r.bidwords) == 8 for r in records)

    def test_values_consistent_with_map(self):
        records, ecpm_map = gen_synthetic(self.SPEC)
        for r in records:
            for bw in r.bidwords:
                assert ecpm_map[bw.text] == bw.ecpm

    def test_queries_share_topic_tokens_with_bidwords(self):
        records, _ = gen_synthetic(self.SPEC)
        overlaps = [
            token_overlap(r.query, bw.text) for r in records for bw in r.bidwords
        ]
        assert sum(1 for o in overlaps if o > 0) / len(overlaps) > 0.5

    def test_value_text_decorrelation(self):
        spec = SyntheticSpec(
            vocab_size=200, n_queries=1000, bidwords_per_query=10, seed=9,
            pool_per_topic=60,
        )
        records, _ = gen_synthetic(spec)
        xs, ys = [], []
        for r in records:
            for bw in r.bidwords:
                xs.append(token_overlap(r.query, bw.text))
                ys.append(bw.ecpm)
        r_coef = np.corrcoef(np.array(xs), np.array(ys))[0, 1]
        assert abs(r_coef) < 0.1

    def test_top_ranked_is_clicked(self):
        records, _ = gen_synthetic(self.SPEC)
        assert all(r.bidwords[0].clicked for r in records)

    def test_bad_spec_rejected(self):
        with pytest.raises(ValueError):
            SyntheticSpec(vocab_size=5, words_per_topic=10)
        with pytest.raises(ValueError):
            SyntheticSpec(bidwords_per_query=500, pool_per_topic=100)


class TestSftTasks:
    def test_single_pair_single_record(self):
        task1, _ = format_sft_tasks([("q", "b", 3.0)], {})
        assert task1 == [{"prompt": task1[0]["prompt"], "query": "q", "bidword": "b"}]

    def test_lists_sorted_by_value(self):
        _, task2 = format_sft_tasks(
            [], {"q": [("cheap", 1.0), ("rich", 9.0), ("mid", 5.0)]}
        )
        assert task2[0]["bidword_list"] == ["rich", "mid", "cheap"]

    def test_empty_list_skipped(self):
        _, task2 = format_sft_tasks([], {"q": []})
        assert task2 == []


class TestRecordsJsonl:
    def test_roundtrip(self):
        records, _ = gen_synthetic(TestSynthetic.SPEC)
        buf = io.StringIO()
        assert write_records_jsonl(records, buf) == len(records)
        buf.seek(0)
        assert read_records_jsonl(buf) == records

    def test_bad_record_reports_line(self):
        bad = io.StringIO('{"query": "q", "bidwords": [{"text": "a"}]}\n')
        with pytest.raises(ValueError, match="line 1"):
            read_records_jsonl(bad)

    def test_negative_value_rejected(self):
        bad = io.StringIO(
            json.dumps({"query": "q", "bidwords": [{"text": "a", "ecpm": -3}]})
        )
        with pytest.raises(ValueError):
            read_records_jsonl(bad)
