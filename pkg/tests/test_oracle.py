"""Exact enumeration and finite-construction oracles.

The strongest checks here pit the Stirling-number enumeration against
closed forms and against an explicit seating-plan enumeration written
independently in this file.
"""

import itertools
import math

import numpy as np
import pytest
from scipy.special import gammaln

from nhdp.corpus import Corpus
from nhdp.oracle import (
    ExactPosterior,
    TruncSpec,
    canonical_config,
    canonical_labels,
    config_log_joint,
    enumerate_posterior,
    finite_predictive,
    finite_forward_sampler,
)
from nhdp.randdist import Rng, crp_predictive
from nhdp.state import Hyper


def set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1 :]
        yield [[first]] + part


def rising(a, n):
    return float(np.exp(gammaln(a + n) - gammaln(a)))


def seating_level_prob(n_mat, alpha, gamma):
    """Probability of one level's dish layer by explicit enumeration of
    table seating plans: per restaurant, tokens of each dish partition
    into tables (one dish per table); the global table-to-dish pattern is
    a partition drawn from a second urn with concentration gamma."""
    R, K = n_mat.shape
    total = 0.0
    per_restaurant = []
    for r in range(R):
        options = []  # list of (per-dish table counts, seating weight)
        dish_tokens = [int(n_mat[r, k]) for k in range(K)]
        ways = []
        for k, n in enumerate(dish_tokens):
            if n == 0:
                ways.append([(0, 1.0)])
                continue
            outs = {}
            for part in set_partitions(list(range(n))):
                m = len(part)
                w = alpha**m * np.prod([math.factorial(len(b) - 1) for b in part])
                outs[m] = outs.get(m, 0.0) + w
            ways.append(sorted(outs.items()))
        combos = []
        for combo in itertools.product(*ways):
            m_vec = tuple(c[0] for c in combo)
            w = np.prod([c[1] for c in combo]) / rising(alpha, sum(dish_tokens))
            combos.append((m_vec, w))
        per_restaurant.append(combos)
    for assignment in itertools.product(*per_restaurant):
        col = np.zeros(K)
        w = 1.0
        for m_vec, weight in assignment:
            col += np.asarray(m_vec)
            w *= weight
        # Dish patterns: a partition of tables with the given block sizes.
        top = gamma**K * np.prod([math.factorial(int(c) - 1) for c in col if c > 0])
        top /= rising(gamma, col.sum())
        total += w * top
    return total


class TestCanonical:
    def test_canonical_labels(self):
        assert canonical_labels([5, 5, 2, 5, 9]) == (0, 0, 1, 0, 2)
        assert canonical_labels([]) == ()

    def test_canonical_config_matches_level_order(self):
        z = [np.array([3, 3, 1]), np.array([0, 2, 2])]
        assert canonical_config(z) == ((0, 0, 1), (0, 1, 1))


class TestTruncSpec:
    def test_scalar_broadcast_with_hyper(self):
        spec = TruncSpec(K=4, hyper=Hyper(L=2))
        assert spec.K == [4, 4, 4] and spec.L == 2

    def test_for_depth(self):
        spec = TruncSpec(K=[3])
        assert spec.for_depth(1).K == [3, 3]
        with pytest.raises(ValueError, match="levels"):
            TruncSpec(K=[3, 3]).for_depth(2)

    def test_rejects_small_K(self):
        with pytest.raises(ValueError):
            TruncSpec(K=[0])


class TestEnumerateAgainstSeatingPlans:
    """Stirling-expansion layer terms vs the explicit enumeration above."""

    @pytest.mark.parametrize("alpha,gamma", [(1.0, 1.0), (0.5, 2.0), (3.0, 0.7)])
    def test_single_restaurant(self, alpha, gamma):
        corpus = Corpus([[0, 1, 0]], ["a", "b"])
        hyper = Hyper(L=0, eta=0.5, alpha=alpha, gamma=gamma)
        post = enumerate_posterior(corpus, hyper, TruncSpec(K=3, hyper=hyper))
        words = np.array([0, 1, 0])
        for key, p in post.items():
            dishes = key[0]
            K = max(dishes) + 1
            n_mat = np.zeros((1, K), dtype=np.int64)
            for d in dishes:
                n_mat[0, d] += 1
            layer = seating_level_prob(n_mat, alpha, gamma)
            nw = np.zeros((K, 2))
            for d, w in zip(dishes, words):
                nw[d, w] += 1
            word = 1.0
            eta, V = 0.5, 2
            for k in range(K):
                word *= np.exp(
                    gammaln(V * eta)
                    - gammaln(nw[k].sum() + V * eta)
                    + sum(gammaln(c + eta) - gammaln(eta) for c in nw[k])
                )
            expect = layer * word / np.exp(post.log_evidence)
            assert p == pytest.approx(expect, rel=1e-9)

    def test_two_restaurants_share_dishes(self):
        corpus = Corpus([[0], [0, 1]], ["a", "b"])
        hyper = Hyper(L=0, eta=0.3, alpha=0.8, gamma=1.5)
        post = enumerate_posterior(corpus, hyper, TruncSpec(K=3, hyper=hyper))
        doc_of = [0, 1, 1]
        for key, p in post.items():
            dishes = key[0]
            K = max(dishes) + 1
            n_mat = np.zeros((2, K), dtype=np.int64)
            for r, d in zip(doc_of, dishes):
                n_mat[r, d] += 1
            layer = seating_level_prob(n_mat, 0.8, 1.5)
            lj = config_log_joint(key, np.array(doc_of), np.array([0, 0, 1]), hyper, 2)
            word = np.exp(lj) / layer
            assert p == pytest.approx(layer * word / np.exp(post.log_evidence), rel=1e-9)


class TestClosedFormCoincidence:
    """With V=1 the word term is identically 1, so the enumerators expose
    exact prior partition probabilities with known closed forms."""

    def pair_corpus(self):
        return Corpus([[0, 0]], ["w"])

    @pytest.mark.parametrize("alpha,gamma", [(1.0, 1.0), (0.4, 2.5), (2.0, 0.3)])
    def test_infinite_model_pair_probability(self, alpha, gamma):
        hyper = Hyper(L=0, eta=1.0, alpha=alpha, gamma=gamma)
        post = enumerate_posterior(self.pair_corpus(), hyper, TruncSpec(K=2, hyper=hyper))
        expect_same = 1 / (1 + alpha) + alpha / ((1 + alpha) * (1 + gamma))
        assert post.prob(((0, 0),)) == pytest.approx(expect_same, rel=1e-12)
        assert post.prob(((0, 1),)) == pytest.approx(1 - expect_same, rel=1e-12)

    @pytest.mark.parametrize("K", [1, 2, 5, 40])
    def test_finite_model_pair_probability(self, K):
        alpha, gamma = 0.9, 1.3
        hyper = Hyper(L=0, eta=1.0, alpha=alpha, gamma=gamma)
        post = enumerate_posterior(
            self.pair_corpus(), hyper, TruncSpec(K=K, hyper=hyper), model="finite"
        )
        # Same table with prob 1/(1+alpha); two tables land on the same
        # dish with prob (1 + gamma/K)/(1 + gamma) under Dirichlet(gamma/K).
        expect_same = 1 / (1 + alpha) + alpha / (1 + alpha) * (1 + gamma / K) / (1 + gamma)
        assert post.prob(((0, 0),)) == pytest.approx(expect_same, rel=1e-12)

    def test_outer_dp_entity_marginal(self):
        gamma = [1.0, 1.7]
        hyper = Hyper(L=1, eta=1.0, alpha=1.0, gamma=gamma)
        post = enumerate_posterior(
            self.pair_corpus(), hyper, TruncSpec(K=2, hyper=hyper), outer_dp=True
        )
        marg = post.level_marginal(1)
        assert marg[(0, 0)] == pytest.approx(1 / (1 + gamma[1]), rel=1e-12)
        assert marg[(0, 1)] == pytest.approx(gamma[1] / (1 + gamma[1]), rel=1e-12)


class TestPosteriorBasics:
    def corpus(self):
        return Corpus([[0, 1], [1]], ["a", "b"])

    def test_normalization_and_support(self):
        hyper = Hyper(L=1, eta=0.4, alpha=0.9, gamma=1.1)
        post = enumerate_posterior(self.corpus(), hyper, TruncSpec(K=3, hyper=hyper))
        assert post.total() == pytest.approx(1.0, abs=1e-9)
        assert all(p > 0 for _, p in post.items())
        assert post.prob((("nonsense",),)) == 0.0

    def test_level_marginals_sum_to_one(self):
        hyper = Hyper(L=1, eta=0.4)
        post = enumerate_posterior(self.corpus(), hyper, TruncSpec(K=3, hyper=hyper))
        for level in (0, 1):
            assert sum(post.level_marginal(level).values()) == pytest.approx(1.0, abs=1e-9)

    def test_truncation_caps_support(self):
        hyper = Hyper(L=0, eta=0.4)
        post = enumerate_posterior(self.corpus(), hyper, TruncSpec(K=1, hyper=hyper))
        assert len(post) == 1
        assert post.prob(((0, 0, 0),)) == pytest.approx(1.0, abs=1e-12)

    def test_rejects_oversized_corpora(self):
        big = Corpus([[0] * 9], ["w"])
        hyper = Hyper(L=0)
        with pytest.raises(ValueError, match="at most 8"):
            enumerate_posterior(big, hyper, TruncSpec(K=2, hyper=hyper))

    def test_finite_requires_trunc_in_config_joint(self):
        with pytest.raises(ValueError, match="TruncSpec"):
            config_log_joint(
                ((0,),), np.array([0]), np.array([0]), Hyper(L=0), 1, model="finite"
            )
        with pytest.raises(ValueError, match="unknown oracle model"):
            config_log_joint(((0,),), np.array([0]), np.array([0]), Hyper(L=0), 1, model="x")


class TestFiniteConvergesToInfinite:
    def test_posterior_distance_shrinks_with_K(self):
        corpus = Corpus([[0, 1, 0]], ["a", "b"])
        hyper = Hyper(L=0, eta=0.4, alpha=0.8, gamma=1.2)
        exact = enumerate_posterior(corpus, hyper, TruncSpec(K=3, hyper=hyper), model="crf")
        tvs = []
        for K in (3, 6, 12, 24):
            fin = enumerate_posterior(
                corpus, hyper, TruncSpec(K=K, hyper=hyper), model="finite"
            )
            keys = set(exact.table) | set(fin.table)
            tvs.append(0.5 * sum(abs(exact.prob(k) - fin.prob(k)) for k in keys))
        assert all(a > b for a, b in zip(tvs, tvs[1:]))
        assert tvs[-1] < 0.02


class TestFinitePredictive:
    def spec(self, K, gamma=1.5):
        return TruncSpec(K=[K], hyper=Hyper(L=0, gamma=gamma))

    def test_matches_conjugate_algebra(self):
        spec = self.spec(10)
        counts = [3, 1]
        assert finite_predictive(spec, counts, 0) == pytest.approx((3 + 0.15) / 5.5)
        assert finite_predictive(spec, counts, "new") == pytest.approx(8 * 0.15 / 5.5)

    def test_total_mass_is_one(self):
        spec = self.spec(7)
        counts = [2, 2, 1]
        total = finite_predictive(spec, counts, "new") + sum(
            finite_predictive(spec, counts, k) for k in range(3)
        )
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_converges_to_crp_from_below(self):
        counts = [4, 2]
        gamma = 1.5
        crp = crp_predictive(counts, gamma)
        gaps_existing = []
        gaps_new = []
        for K in (5, 20, 100):
            spec = self.spec(K, gamma)
            gaps_existing.append(abs(finite_predictive(spec, counts, 0) - crp[0]))
            gaps_new.append(abs(finite_predictive(spec, counts, "new") - crp[-1]))
        assert gaps_existing[0] > gaps_existing[1] > gaps_existing[2]
        assert gaps_new[0] > gaps_new[1] > gaps_new[2]

    def test_validation(self):
        with pytest.raises(ValueError, match="hyper"):
            finite_predictive(TruncSpec(K=[5]), [1], 0)
        spec = self.spec(2)
        with pytest.raises(ValueError, match="exceed"):
            finite_predictive(spec, [1, 1, 1], 0)
        with pytest.raises(ValueError, match="not among"):
            finite_predictive(spec, [1], 3)


class TestForwardSampler:
    def corpus(self):
        return Corpus([[0, 0, 0], [0, 0]], ["w"])

    def test_single_dish_truncation_collapses(self):
        hyper = Hyper(L=1)
        spec = TruncSpec(K=1, T=3, hyper=hyper)
        z = finite_forward_sampler(spec, self.corpus(), Rng(0))
        assert all(np.all(arr == 0) for arr in z)

    def test_single_table_shares_within_restaurant(self):
        hyper = Hyper(L=0)
        spec = TruncSpec(K=[6], T=1, hyper=hyper)
        z = finite_forward_sampler(spec, self.corpus(), Rng(1))
        assert len(set(z[0][:3].tolist())) == 1
        assert len(set(z[0][3:].tolist())) == 1

    def test_replayable(self):
        hyper = Hyper(L=1)
        spec = TruncSpec(K=[3, 4], T=[2, 3], hyper=hyper)
        a = finite_forward_sampler(spec, self.corpus(), Rng(7))
        b = finite_forward_sampler(spec, self.corpus(), Rng(7))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_pair_coincidence_matches_closed_form(self):
        alpha, gamma, K, T = 0.9, 1.3, 8, 6
        hyper = Hyper(L=0, alpha=alpha, gamma=gamma)
        spec = TruncSpec(K=[K], T=T, hyper=hyper)
        corpus = Corpus([[0, 0]], ["w"])
        rng = Rng(42)
        reps = 20000
        hits = sum(
            int(z[0][0] == z[0][1]) for z in (finite_forward_sampler(spec, corpus, rng) for _ in range(reps))
        )
        a = (1 + alpha / T) / (1 + alpha)  # same table under Dirichlet(alpha/T)
        b = (1 + gamma / K) / (1 + gamma)  # same dish for two tables
        expect = a + (1 - a) * b
        assert hits / reps == pytest.approx(expect, abs=0.01)

    def test_validation(self):
        corpus = self.corpus()
        with pytest.raises(ValueError, match="hyper"):
            finite_forward_sampler(TruncSpec(K=[2], T=2), corpus, Rng(0))
        with pytest.raises(ValueError, match="table caps"):
            finite_forward_sampler(TruncSpec(K=[2], hyper=Hyper(L=0)), corpus, Rng(0))
        with pytest.raises(ValueError, match="depth"):
            finite_forward_sampler(TruncSpec(K=[2, 2], T=2, hyper=Hyper(L=0)), corpus, Rng(0))
        with pytest.raises(ValueError, match="positive scalar"):
            finite_forward_sampler(
                TruncSpec(K=[2], T=[[1, 0]], hyper=Hyper(L=0)), corpus, Rng(0)
            )


def test_exact_posterior_container():
    post = ExactPosterior({("a",): 0.25, ("b",): 0.75}, -1.0, "crf")
    assert len(post) == 2
    assert post.total() == 1.0
    assert post.prob(("a",)) == 0.25
