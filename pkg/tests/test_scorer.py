from __future__ import annotations

import io

import numpy as np
import pytest

from valuedec.scorer import (
    NgramScorer,
    ScorerFormatError,
    TableScorer,
    UniformScorer,
    fit_ngram,
    perplexity,
    query_bucket,
    table_scorer,
    uniform_scorer,
    validate_distribution,
)

V = 6


def assert_valid_distribution(probs, size=V):
    assert probs.shape == (size,)
    assert np.all(probs >= 0)
    assert abs(probs.sum() - 1.0) < 1e-9


class TestUniform:
    def test_every_prefix_uniform(self):
        scorer = uniform_scorer(V)
        for prefix in ([], [1], [2, 3]):
            probs = scorer.next_distribution("anything", prefix)
            np.testing.assert_allclose(probs, 1.0 / V)
            assert_valid_distribution(probs)

    def test_eos_validated(self):
        with pytest.raises(ValueError):
            UniformScorer(4, end_of_sequence=4)


class TestTable:
    def test_stored_entry_returned_verbatim(self):
        dist = np.array([0.5, 0.25, 0.25, 0.0, 0.0, 0.0])
        scorer = table_scorer({("q", (1,)): dist}, V)
        np.testing.assert_array_equal(scorer.next_distribution("q", [1]), dist)

    def test_missing_entry_falls_back_to_uniform(self):
        scorer = table_scorer({}, V)
        np.testing.assert_allclose(scorer.next_distribution("q", [9]), 1.0 / V)

    def test_invalid_distribution_rejected_at_load(self):
        with pytest.raises(ValueError):
            table_scorer({("q", ()): np.array([0.9, 0.0, 0.0, 0.0, 0.0, 0.0])}, V)
        with pytest.raises(ValueError):
            table_scorer({("q", ()): np.full(V, -1.0 / V)}, V)
        with pytest.raises(ValueError):
            table_scorer({("q", ()): np.ones(V - 1) / (V - 1)}, V)


class TestNgram:
    def test_unigram_proportional_to_frequency_plus_delta(self):
        # one pair, n=1: counts are token frequencies with eos appended
        model = fit_ngram([("q", [1, 1, 2])], n=1, delta=0.5, vocabulary_size=4)
        probs = model.next_distribution("q", [])
        counts = np.array([1.0, 2.0, 1.0, 0.0])  # eos=0 appended once
        expected = (counts + 0.5) / (counts.sum() + 0.5 * 4)
        np.testing.assert_allclose(probs, expected)

    def test_large_delta_approaches_uniform(self):
        model = fit_ngram([("q", [1, 1, 1])], n=1, delta=1e9, vocabulary_size=4)
        probs = model.next_distribution("q", [])
        np.testing.assert_allclose(probs, 0.25, atol=1e-6)

    def test_bigram_depends_on_context(self):
        pairs = [("q", [1, 2]), ("q", [1, 3]), ("q", [2, 3])]
        model = fit_ngram(pairs, n=2, delta=0.01, vocabulary_size=4)
        after_1 = model.next_distribution("q", [1])
        after_2 = model.next_distribution("q", [2])
        assert after_1[2] > after_2[2]
        assert after_2[3] > after_2[2]

    def test_bigram_beats_unigram_perplexity(self):
        rng = np.random.default_rng(8)
        # sequences with strong bigram structure: token follows token+1 mod V
        pairs = []
        for _ in range(300):
            start = int(rng.integers(1, 5))
            seq = [start, start % 4 + 1, (start + 1) % 4 + 1]
            pairs.append(("q", seq))
        train, held = pairs[:200], pairs[200:]
        uni = fit_ngram(train, n=1, delta=0.1, vocabulary_size=5)
        bi = fit_ngram(train, n=2, delta=0.1, vocabulary_size=5)
        assert perplexity(bi, held) <= perplexity(uni, held)

    def test_query_conditioning_via_buckets(self):
        pairs = [("alpha", [1, 2]), ("beta", [3, 4])]
        model = fit_ngram(pairs, n=2, delta=0.01, vocabulary_size=5, query_buckets=64)
        if query_bucket("alpha", 64) != query_bucket("beta", 64):
            p_alpha = model.next_distribution("alpha", [])
            p_beta = model.next_distribution("beta", [])
            assert p_alpha[1] > p_beta[1]
            assert p_beta[3] > p_alpha[3]

    def test_unseen_context_is_uniform(self):
        model = fit_ngram([("q", [1])], n=2, delta=0.1, vocabulary_size=4)
        probs = model.next_distribution("unrelated-query-text", [3])
        np.testing.assert_allclose(probs, 0.25)

    def test_empty_pairs_rejected(self):
        with pytest.raises(ValueError):
            fit_ngram([], n=1, delta=0.1, vocabulary_size=4)

    def test_distribution_contract_random_probes(self):
        rng = np.random.default_rng(123)
        pairs = [
            (f"q{rng.integers(0, 9)}", rng.integers(1, V, size=rng.integers(1, 6)).tolist())
            for _ in range(150)
        ]
        model = fit_ngram(pairs, n=3, delta=0.2, vocabulary_size=V)
        for _ in range(200):
            query = f"q{rng.integers(0, 12)}"
            prefix = rng.integers(0, V, size=rng.integers(0, 5)).tolist()
            probs = model.next_distribution(query, prefix)
            assert_valid_distribution(probs)
            validate_distribution(probs, V)

    def test_determinism(self):
        model = fit_ngram([("q", [1, 2, 3])], n=2, delta=0.3, vocabulary_size=V)
        a = model.next_distribution("q", [1])
        b = model.next_distribution("q", [1])
        np.testing.assert_array_equal(a, b)

    def test_save_load_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        pairs = [
            (f"q{i % 7}", rng.integers(1, V, size=3).tolist()) for i in range(80)
        ]
        model = fit_ngram(pairs, n=2, delta=0.25, vocabulary_size=V, query_buckets=16)
        path = tmp_path / "model.ngram"
        model.save(path)
        loaded = NgramScorer.load(path)
        assert loaded.order == model.order
        assert loaded.delta == model.delta
        assert loaded.context_count == model.context_count
        for _ in range(50):
            query = f"q{rng.integers(0, 9)}"
            prefix = rng.integers(0, V, size=rng.integers(0, 3)).tolist()
            np.testing.assert_array_equal(
                loaded.next_distribution(query, prefix),
                model.next_distribution(query, prefix),
            )

    def test_bad_magic_rejected(self):
        with pytest.raises(ScorerFormatError, match="magic"):
            NgramScorer.load(io.BytesIO(b"NOTNGRAM" + bytes(16)))

    def test_truncated_rejected(self):
        model = fit_ngram([("q", [1, 2])], n=2, delta=0.1, vocabulary_size=V)
        buf = io.BytesIO()
        model.save(buf)
        with pytest.raises(ScorerFormatError):
            NgramScorer.load(io.BytesIO(buf.getvalue()[:-4]))
