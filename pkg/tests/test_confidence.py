"""Token-confidence aggregation: quadratic positional weights, the three
strategies, idf tables, and the anchor mask."""

import math

import numpy as np
import pytest

from evigain.confidence import (
    ConfidenceStrategy,
    ConfidenceValue,
    FallbackWarning,
    IdfTable,
    anchored_mean_logprob,
    build_idf_table,
    confidence,
    positional_weights,
    semantic_mask,
    weighted_confidence,
)
from evigain.errors import InvalidInputError
from evigain.teacher import TokenLogProbSequence


def seq_from_probs(probs):
    return TokenLogProbSequence(
        tokens=tuple(f"t{i}" for i in range(len(probs))),
        logprobs=tuple(math.log(p) for p in probs),
    )


class TestPositionalWeights:
    def test_reference_profile(self):
        """n=8 with k=0.2, c=1.5, peak=5 gives the hand-computed profile."""
        w = positional_weights(8, 0.2, 1.5, 5)
        expected = np.array([0.0, 0.0, 0.7, 1.3, 1.5, 1.3, 0.7, 0.0])
        np.testing.assert_allclose(w, expected, atol=1e-12)

    def test_single_token_at_peak(self):
        np.testing.assert_allclose(positional_weights(1, 0.2, 1.5, 1), [1.5], atol=1e-15)

    def test_steep_attenuation(self):
        np.testing.assert_allclose(positional_weights(3, 1000.0, 1.5, 2), [0.0, 1.5, 0.0], atol=1e-15)

    def test_nonnegative(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            n = int(rng.integers(1, 40))
            w = positional_weights(n, float(rng.uniform(0.01, 5)), float(rng.uniform(0.01, 5)),
                                   float(rng.uniform(1, n + 1)))
            assert np.all(w >= 0)

    def test_symmetry_about_peak(self):
        """w(peak - d) == w(peak + d) whenever both indices are in range."""
        rng = np.random.default_rng(12)
        for _ in range(100):
            n = int(rng.integers(3, 30))
            peak = int(rng.integers(2, n))
            w = positional_weights(n, float(rng.uniform(0.01, 2)), float(rng.uniform(0.1, 3)), peak)
            for delta in range(1, min(peak - 1, n - peak) + 1):
                assert w[peak - 1 - delta] == pytest.approx(w[peak - 1 + delta], abs=1e-12)

    def test_preconditions(self):
        with pytest.raises(InvalidInputError):
            positional_weights(0, 0.2, 1.5, 5)
        with pytest.raises(InvalidInputError):
            positional_weights(3, 0.0, 1.5, 5)
        with pytest.raises(InvalidInputError):
            positional_weights(3, 0.2, -1.0, 5)


class TestConfidenceValue:
    def test_probability_range_enforced(self):
        with pytest.raises(InvalidInputError):
            ConfidenceValue(value=0.0, scale="probability")
        with pytest.raises(InvalidInputError):
            ConfidenceValue(value=1.5, scale="probability")

    def test_logprob_range_enforced(self):
        with pytest.raises(InvalidInputError):
            ConfidenceValue(value=0.2, scale="logprob")

    def test_unknown_scale(self):
        with pytest.raises(InvalidInputError):
            ConfidenceValue(value=0.5, scale="percent")


class TestEqualStrategy:
    def test_plain_product(self):
        got = confidence(seq_from_probs([0.5, 0.5]), ConfidenceStrategy(kind="equal"))
        assert got.scale == "probability"
        assert got.value == pytest.approx(0.25, rel=1e-12)

    def test_explicit_weights_reduction(self):
        """0.1^0 * 0.8^1 = 0.8 under the weighted product."""
        got = weighted_confidence(seq_from_probs([0.1, 0.8]), np.array([0.0, 1.0]))
        assert got.value == pytest.approx(0.8, rel=1e-12)

    def test_all_ones_weights_match_equal(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            n = int(rng.integers(1, 20))
            seq = seq_from_probs(rng.uniform(0.05, 0.99, size=n))
            eq = confidence(seq, ConfidenceStrategy(kind="equal"))
            ones = weighted_confidence(seq, np.ones(n))
            assert eq.value == ones.value


class TestPositionalStrategy:
    def test_window_only_contributes(self):
        # tokens outside the quadratic support have weight zero
        seq = seq_from_probs([0.001, 0.001, 0.9, 0.9, 0.9, 0.9, 0.9, 0.001])
        got = confidence(seq, ConfidenceStrategy(kind="positional", k=0.2, c=1.5, peak=5.0))
        w = positional_weights(8, 0.2, 1.5, 5.0)
        expected = math.exp(float(np.dot(w, [math.log(p) for p in
                                             [0.001, 0.001, 0.9, 0.9, 0.9, 0.9, 0.9, 0.001]])))
        assert got.value == pytest.approx(expected, rel=1e-12)

    def test_zero_weight_fallback_warns(self):
        """Answers shorter than the quadratic support fall back to equal."""
        seq = seq_from_probs([0.4, 0.6])
        strategy = ConfidenceStrategy(kind="positional", k=0.2, c=1.5, peak=5.0)
        with pytest.warns(FallbackWarning):
            got = confidence(seq, strategy)
        assert got.value == pytest.approx(0.24, rel=1e-12)

    def test_midpoint_mode(self):
        seq = seq_from_probs([0.5] * 9)
        got = confidence(seq, ConfidenceStrategy(kind="positional", k=0.2, c=1.5,
                                                 peak_mode="midpoint"))
        w = positional_weights(9, 0.2, 1.5, 4.5)
        assert got.value == pytest.approx(math.exp(float(w.sum()) * math.log(0.5)), rel=1e-12)

    def test_normalized_weights(self):
        seq = seq_from_probs([0.3, 0.5, 0.7, 0.6, 0.4, 0.8, 0.2, 0.9])
        plain = confidence(seq, ConfidenceStrategy(kind="positional"))
        normed = confidence(seq, ConfidenceStrategy(kind="positional", normalize_weights=True))
        w = positional_weights(8, 0.2, 1.5, 5.0)
        assert normed.value == pytest.approx(plain.value ** (1.0 / w.sum()), rel=1e-9)

    def test_probability_bounds(self):
        rng = np.random.default_rng(22)
        for _ in range(200):
            n = int(rng.integers(1, 25))
            seq = seq_from_probs(rng.uniform(0.01, 1.0, size=n))
            for kind in ("equal", "positional"):
                import warnings
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", FallbackWarning)
                    got = confidence(seq, ConfidenceStrategy(kind=kind))
                assert 0.0 < got.value <= 1.0

    def test_monotonicity_in_single_prob(self):
        """Raising one token's probability never lowers the confidence when
        that token carries positive weight (true for every strategy)."""
        rng = np.random.default_rng(23)
        idf = build_idf_table(["alpha beta", "alpha gamma", "delta epsilon"])
        strategies = [
            ConfidenceStrategy(kind="equal"),
            ConfidenceStrategy(kind="positional", k=0.2, c=1.5, peak=3.0),
            ConfidenceStrategy(kind="semantic_anchor", tau_freq=0.0, idf=idf),
        ]
        for _ in range(60):
            n = 5
            probs = rng.uniform(0.05, 0.9, size=n)
            i = int(rng.integers(0, n))
            bumped = probs.copy()
            bumped[i] = min(probs[i] + rng.uniform(0.01, 0.09), 0.99)
            for strategy in strategies:
                low = confidence(seq_from_probs(probs), strategy)
                high = confidence(seq_from_probs(bumped), strategy)
                assert high.value >= low.value


class TestIdfTable:
    def test_term_in_all_docs_is_zero(self):
        table = build_idf_table(["the cat", "the dog", "the bird"])
        assert table.lookup("the") == pytest.approx(0.0, abs=1e-15)

    def test_smoothed_value(self):
        """N=3, df=1 -> ln(4/2) = ln 2."""
        table = build_idf_table(["cat runs", "dog sleeps", "bird sings"])
        assert table.lookup("cat") == pytest.approx(math.log(2), abs=1e-12)

    def test_unknown_term_resolves_to_max(self):
        table = build_idf_table(["the cat", "the dog", "the bird"])
        assert table.lookup("zebra") == table.max_idf
        assert table.max_idf == pytest.approx(math.log(2), abs=1e-12)

    def test_permutation_invariance(self):
        docs = ["a b c", "b c d", "c d e", "e f a"]
        t1 = build_idf_table(docs)
        t2 = build_idf_table(list(reversed(docs)))
        assert dict(t1.items()) == dict(t2.items())

    def test_empty_corpus_rejected(self):
        with pytest.raises(InvalidInputError):
            build_idf_table([])

    def test_save_load_round_trip(self, tmp_path):
        table = build_idf_table(["cat runs fast", "dog sleeps", "bird sings songs"])
        path = tmp_path / "idf.jsonl"
        table.save(path)
        loaded = IdfTable.load(path)
        assert loaded.corpus_doc_count == table.corpus_doc_count
        assert dict(loaded.items()) == dict(table.items())

    def test_negative_idf_rejected(self):
        with pytest.raises(InvalidInputError):
            IdfTable({"x": -0.5}, corpus_doc_count=2)

    def test_load_requires_header(self, tmp_path):
        from evigain.errors import RecordParseError

        path = tmp_path / "idf.jsonl"
        path.write_text('{"term": "x", "idf": 0.5}\n')
        with pytest.raises(RecordParseError, match="corpus_doc_count"):
            IdfTable.load(path)


class TestSemanticMask:
    def test_stopword_filtered(self):
        table = build_idf_table(["the cat", "the dog", "the bird"])
        mask = semantic_mask(["the"], table, tau_freq=0.15)
        assert mask.tolist() == [0]

    def test_content_word_kept(self):
        table = build_idf_table(["cat runs", "dog sleeps", "bird sings"])
        mask = semantic_mask(["cat"], table, tau_freq=0.15)
        assert mask.tolist() == [1]

    def test_zero_threshold_keeps_all_positive_idf(self):
        table = build_idf_table(["cat runs", "dog sleeps", "bird sings"])
        mask = semantic_mask(["cat", "dog", "sings"], table, tau_freq=0.0)
        assert mask.tolist() == [1, 1, 1]

    def test_empty_tokens_rejected(self):
        table = build_idf_table(["a"])
        with pytest.raises(InvalidInputError):
            semantic_mask([], table, 0.15)


class TestSemanticAnchorStrategy:
    def test_anchored_mean(self):
        """mask [0,1,1] over logprobs [-0.1, -2.0, -0.5] -> (-2.0-0.5)/2."""
        seq = TokenLogProbSequence(tokens=("a", "b", "c"), logprobs=(-0.1, -2.0, -0.5))
        got = anchored_mean_logprob(seq, np.array([0, 1, 1]))
        assert got.scale == "logprob"
        assert got.value == pytest.approx(-1.25, abs=1e-12)

    def test_all_ones_mask_is_plain_mean(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            n = int(rng.integers(1, 30))
            logps = -rng.uniform(0.01, 5.0, size=n)
            seq = TokenLogProbSequence(tokens=tuple(f"t{i}" for i in range(n)),
                                       logprobs=tuple(logps))
            got = anchored_mean_logprob(seq, np.ones(n, dtype=np.int64))
            assert got.value == float(np.mean(logps))

    def test_strategy_end_to_end(self):
        table = build_idf_table(["the cat runs", "the dog sleeps", "the bird sings"])
        seq = TokenLogProbSequence(tokens=("the", "cat"), logprobs=(-0.05, -1.2))
        got = confidence(seq, ConfidenceStrategy(kind="semantic_anchor", tau_freq=0.15, idf=table))
        assert got.value == pytest.approx(-1.2, abs=1e-12)  # "the" masked out

    def test_all_zero_mask_falls_back_with_warning(self):
        table = build_idf_table(["the cat", "the dog", "the bird"])
        seq = TokenLogProbSequence(tokens=("the", "the"), logprobs=(-0.5, -1.5))
        with pytest.warns(FallbackWarning):
            got = confidence(seq, ConfidenceStrategy(kind="semantic_anchor",
                                                     tau_freq=0.15, idf=table))
        assert got.value == pytest.approx(-1.0, abs=1e-12)

    def test_requires_idf(self):
        with pytest.raises(InvalidInputError):
            ConfidenceStrategy(kind="semantic_anchor", idf=None)


class TestStrategyValidation:
    def test_unknown_kind(self):
        with pytest.raises(InvalidInputError):
            ConfidenceStrategy(kind="harmonic")

    def test_positional_params(self):
        with pytest.raises(InvalidInputError):
            ConfidenceStrategy(kind="positional", k=0.0)
        with pytest.raises(InvalidInputError):
            ConfidenceStrategy(kind="positional", c=-1.0)
        with pytest.raises(InvalidInputError):
            ConfidenceStrategy(kind="positional", peak_mode="auto")
