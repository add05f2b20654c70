"""Held-out scoring, entity-recovery NMI, metric files, scheme benchmarks."""

import numpy as np
import pytest

from nhdp.corpus import Corpus
from nhdp.evaluation import (
    MetricRecord,
    benchmark_schemes,
    cosine_contingency,
    extract_contributions,
    nmi_from_similarity,
    nmi_hidden_authors,
    path_word_matrix,
    perplexity,
    perplexity_report,
    read_metrics_csv,
    write_metrics_csv,
)
from nhdp.randdist import Rng
from nhdp.state import Hyper, PosteriorSample, new_state


def flat_sample(V=4, M=3):
    """Single-topic model with no word counts: predicts uniformly."""
    return PosteriorSample(
        hyper=Hyper(L=0, eta=1.0),
        K=[1],
        n=[np.zeros((M, 1), dtype=np.int64)],
        beta=[np.array([0.5])],
        beta_new=np.array([0.5]),
        nw=np.zeros((1, V), dtype=np.int64),
        nw_sum=np.zeros(1, dtype=np.int64),
        dish_author=[None],
        regime="none",
        M=M,
        V=V,
        sweep=1,
    )


def peaked_sample(V=4):
    """Two topics, each concentrated on its own word pair."""
    nw = np.array([[30, 30, 0, 0], [0, 0, 30, 30]], dtype=np.int64)
    return PosteriorSample(
        hyper=Hyper(L=0, eta=0.01, alpha=0.5),
        K=[2],
        n=[np.array([[40, 0], [0, 40]], dtype=np.int64)],
        beta=[np.array([0.45, 0.45])],
        beta_new=np.array([0.1]),
        nw=nw,
        nw_sum=nw.sum(axis=1),
        dish_author=[None, None],
        regime="none",
        M=2,
        V=V,
        sweep=1,
    )


def nested_sample():
    """Two entities routing to disjoint topics over V=4."""
    nw = np.array([[50, 50, 0, 0], [0, 0, 50, 50]], dtype=np.int64)
    return PosteriorSample(
        hyper=Hyper(L=1, eta=0.01, alpha=[0.5, 0.5]),
        K=[2, 2],
        n=[
            np.array([[60, 0], [0, 60]], dtype=np.int64),  # entity-topic
            np.array([[30, 0], [0, 30], [15, 15]], dtype=np.int64),  # doc-entity
        ],
        beta=[np.array([0.45, 0.45]), np.array([0.45, 0.45])],
        beta_new=np.array([0.1, 0.1]),
        nw=nw,
        nw_sum=nw.sum(axis=1),
        dish_author=[None, None],
        regime="none",
        M=3,
        V=4,
        sweep=1,
    )


class TestPathWordMatrix:
    def test_rows_are_distributions(self):
        for sample in (flat_sample(), peaked_sample(), nested_sample()):
            A = path_word_matrix(sample)
            assert A.shape == (sample.K[sample.hyper.L] + 1, sample.V)
            np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-12)
            assert np.all(A >= 0)

    def test_new_dish_row_is_uniform_at_depth_zero(self):
        A = path_word_matrix(peaked_sample())
        np.testing.assert_allclose(A[-1], 0.25)

    def test_nested_chain_routes_through_entity_topics(self):
        A = path_word_matrix(nested_sample())
        # Entity 0 feeds topic 0 which emits words {0, 1} near-exclusively.
        assert A[0, :2].sum() > 0.95
        assert A[1, 2:].sum() > 0.95


class TestPerplexity:
    def test_uniform_model_scores_vocabulary_size(self):
        V = 7
        sample = flat_sample(V=V)
        test = Corpus([[0, 1, 2, 3], [4, 5, 6, 0]], [f"w{v}" for v in range(V)])
        assert perplexity([sample], test) == pytest.approx(V, rel=1e-9)

    def test_never_below_one(self):
        test = Corpus([[0, 0, 0, 0]], ["a", "b", "c", "d"])
        assert perplexity([peaked_sample()], test) >= 1.0

    def test_matched_beats_shuffled_content(self):
        rng = np.random.default_rng(0)
        matched = Corpus([([0, 1] * 6), ([2, 3] * 6)], ["a", "b", "c", "d"])
        mixed = Corpus([rng.integers(0, 4, 12).tolist() for _ in range(2)], ["a", "b", "c", "d"])
        s = peaked_sample()
        assert perplexity([s], matched) < perplexity([s], mixed)

    def test_even_tokens_fold_odd_tokens_score(self):
        report = perplexity_report([peaked_sample()], Corpus([[0, 1, 0, 1, 0]], ["a", "b", "c", "d"]))
        assert report.n_scored == 2
        np.testing.assert_array_equal(report.per_doc_tokens, [2])
        single = perplexity_report([peaked_sample()], Corpus([[0], [2, 3]], ["a", "b", "c", "d"]))
        assert single.per_doc_tokens.tolist() == [0, 1]
        assert single.per_doc_log[0] == 0.0

    def test_oov_scored_uniform_and_counted(self):
        V = 4
        sample = flat_sample(V=V)
        vocab = [f"w{v}" for v in range(6)]
        test = Corpus([[0, 5, 1, 4]], vocab)  # ids 4, 5 unseen by the model
        report = perplexity_report([sample], test)
        assert report.n_oov == 2
        assert report.perplexity == pytest.approx(V, rel=1e-9)

    def test_requires_samples_and_consistent_vocab(self):
        test = Corpus([[0, 1]], ["a", "b", "c", "d"])
        with pytest.raises(ValueError, match="at least one"):
            perplexity_report([], test)
        with pytest.raises(ValueError, match="vocabulary size"):
            perplexity_report([flat_sample(V=4), flat_sample(V=5)], test)

    def test_requires_scoreable_tokens(self):
        with pytest.raises(ValueError, match="no tokens"):
            perplexity_report([flat_sample()], Corpus([[0]], ["a", "b", "c", "d"]))

    def test_deterministic_given_rng(self):
        test = Corpus([[0, 1, 2, 3, 0, 1]], ["a", "b", "c", "d"])
        a = perplexity([peaked_sample()], test, rng=Rng(5, 7))
        b = perplexity([peaked_sample()], test, rng=Rng(5, 7))
        assert a == b

    def test_sample_averaging_pools_probabilities(self):
        test = Corpus([[0, 1, 0, 1]], ["a", "b", "c", "d"])
        sharp = perplexity([peaked_sample()], test)
        flat = perplexity([flat_sample()], test)
        both = perplexity([peaked_sample(), flat_sample()], test)
        assert sharp < both < flat
        # Probabilities average before the log, so the pooled score is
        # better than the average of the individual log scores.
        assert both < np.exp(0.5 * (np.log(sharp) + np.log(flat))) + 1e-9


class TestCosineContingency:
    def test_hand_values(self):
        sim = cosine_contingency(np.array([[1.0, 0.0], [1.0, 1.0]]), np.array([[2.0, 0.0]]))
        np.testing.assert_allclose(sim, [[1.0], [np.sqrt(0.5)]])

    def test_validation(self):
        with pytest.raises(ValueError, match="mismatched"):
            cosine_contingency(np.ones((2, 3)), np.ones((2, 4)))
        with pytest.raises(ValueError, match="nonnegative"):
            cosine_contingency(np.array([[1.0, -1.0]]), np.ones((1, 2)))
        with pytest.raises(ValueError, match="all-zero"):
            cosine_contingency(np.zeros((1, 2)), np.ones((1, 2)))


class TestNmi:
    def test_frozen_two_by_two(self):
        # P = [[2,1],[1,2]]/6: I = (2/3)log(4/3) + (1/3)log(2/3); H = log 2.
        val = nmi_from_similarity(np.array([[2.0, 1.0], [1.0, 2.0]]))
        expect = ((2 / 3) * np.log(4 / 3) + (1 / 3) * np.log(2 / 3)) / np.log(2)
        assert val == pytest.approx(expect, rel=1e-12)
        assert val == pytest.approx(0.0817, abs=5e-5)

    def test_identity_is_one(self):
        assert nmi_from_similarity(np.eye(4)) == pytest.approx(1.0, abs=1e-12)

    def test_uniform_is_zero(self):
        assert nmi_from_similarity(np.ones((2, 3))) == pytest.approx(0.0, abs=1e-12)

    def test_single_cell_degenerate_agreement(self):
        assert nmi_from_similarity(np.array([[5.0]])) == 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            nmi_from_similarity(np.array([[-1.0, 2.0]]))
        with pytest.raises(ValueError, match="no mass"):
            nmi_from_similarity(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            nmi_from_similarity(np.zeros((0, 2)))

    def test_hidden_author_recovery_orders_candidates(self):
        rng = np.random.default_rng(3)
        truth = rng.gamma(1.0, size=(3, 20))
        permuted = truth[[2, 0, 1]]
        noisy = truth + rng.gamma(1.0, size=(3, 20)) * 5.0
        assert nmi_hidden_authors(truth, permuted) == pytest.approx(
            nmi_hidden_authors(truth, truth), rel=1e-9
        )
        assert nmi_hidden_authors(truth, truth) > nmi_hidden_authors(truth, noisy)


class TestExtractContributions:
    def test_columns_conserve_document_tokens(self):
        corpus = Corpus([[0, 1, 2], [2, 1], [0, 0, 3, 3]], ["a", "b", "c", "d"])
        state = new_state(corpus, None, Hyper(L=1), Rng(4))
        contrib = extract_contributions(state.snapshot())
        assert contrib.shape == (state.K(1), corpus.M)
        np.testing.assert_array_equal(contrib.sum(axis=0), corpus.N)

    def test_requires_entity_level(self):
        with pytest.raises(ValueError, match="L >= 1"):
            extract_contributions(flat_sample())


class TestMetricsCsv:
    def test_roundtrip_and_determinism(self, tmp_path):
        records = [
            MetricRecord("perplexity", 123.456789, seed=3, regime="partial", sweep=40, wall_ms=1.5),
            MetricRecord("nmi", 0.25),
        ]
        p1, p2 = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        write_metrics_csv(records, p1)
        write_metrics_csv(records, p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()
        back = read_metrics_csv(p1)
        assert back == records

    def test_header_is_validated(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("nope,really\n1,2\n")
        with pytest.raises(ValueError, match="header"):
            read_metrics_csv(str(path))


class TestBenchmarkSchemes:
    def corpus(self):
        return Corpus([[0, 1, 2, 0], [2, 3, 1], [0, 3]], ["a", "b", "c", "d"])

    def test_zero_sweeps_is_empty(self):
        assert benchmark_schemes(self.corpus(), Hyper(L=1), 0) == []

    def test_mode_validation(self):
        with pytest.raises(ValueError, match="unknown benchmark mode"):
            benchmark_schemes(self.corpus(), Hyper(L=1), 1, mode="x")
        with pytest.raises(ValueError, match="L=0"):
            benchmark_schemes(self.corpus(), Hyper(L=1), 1, mode="hdp")
        with pytest.raises(ValueError, match="L=1"):
            benchmark_schemes(self.corpus(), Hyper(L=0), 1, mode="ungrouped2")

    @pytest.mark.parametrize("mode,L", [("hdp", 0), ("ungrouped2", 1)])
    def test_records_cover_both_schemes(self, mode, L):
        records = benchmark_schemes(self.corpus(), Hyper(L=L), 2, seed=1, mode=mode)
        names = {r.name for r in records}
        assert {"direct/sweep_seconds", "ncrf/sweep_seconds", "direct/K0", "ncrf/K0",
                "direct/init_seconds", "ncrf/init_seconds", "ncrf/weight_evals",
                "direct/mean_sweep_seconds", "ncrf/mean_sweep_seconds"} <= names
        for scheme in ("direct", "ncrf"):
            per_sweep = [r.value for r in records if r.name == f"{scheme}/sweep_seconds"]
            total = [r for r in records if r.name == f"{scheme}/total_seconds"][0]
            mean = [r for r in records if r.name == f"{scheme}/mean_sweep_seconds"][0]
            assert len(per_sweep) == 2
            assert total.value == pytest.approx(sum(per_sweep), rel=1e-9)
            assert mean.value == pytest.approx(total.value / 2, rel=1e-9)
