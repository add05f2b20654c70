"""Held-out evaluation, entity-recovery scoring, and scheme benchmarks.

Held-out likelihood uses document completion: even-position tokens of
each test document are folded in with a few Gibbs sweeps over
document-local variables only (all global counts frozen), then the
odd-position tokens are scored under the resulting predictive, averaged
across posterior samples.  Entity recovery is scored as normalized
mutual information between true and discovered contribution vectors,
where the joint is built from pairwise cosine similarities.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus
from .randdist import Rng, sample_categorical
from .state import PosteriorSample

__all__ = [
    "PerplexityReport",
    "MetricRecord",
    "perplexity",
    "perplexity_report",
    "cosine_contingency",
    "nmi_from_similarity",
    "nmi_hidden_authors",
    "extract_contributions",
    "benchmark_schemes",
    "write_metrics_csv",
    "REFERENCE_PERPLEXITY_NIPS",
    "REFERENCE_PERPLEXITY_HIDDEN",
    "REFERENCE_SCHEME_PERPLEXITY_NIPS",
    "REFERENCE_NMI",
]

# Reported large-corpus results from the original study of this model
# family, kept as context for the desk-scale pipeline here.  They came
# from corpora (NIPS, DBLP) and compute budgets this artifact does not
# ship, so tests treat them as non-reproducible reference points and
# assert qualitative relationships only.
REFERENCE_PERPLEXITY_NIPS = {"atm": 2783.0, "hdp": 1775.0, "nhdp_complete": 1247.0}
REFERENCE_PERPLEXITY_HIDDEN = {
    "nips": {
        "hdp": 2572.0,
        "nhdp_none": 1882.0,
        "nhdp_partial_0.6_0.6": 1434.0,
        "nhdp_partial_0.4_0.4": 1266.0,
        "nhdp_partial_0.2_0.2": 1109.0,
        "nhdp_complete": 987.0,
    },
    "dblp": {
        "hdp": 1027.0,
        "nhdp_none": 997.0,
        "nhdp_partial_0.6_0.6": 935.0,
        "nhdp_partial_0.4_0.4": 869.0,
        "nhdp_partial_0.2_0.2": 676.0,
        "nhdp_complete": 394.0,
    },
}
REFERENCE_SCHEME_PERPLEXITY_NIPS = {"direct": 2230.0, "ncrf": 1937.0}
REFERENCE_NMI = {
    "upper_bound_full_vocab": 0.86,
    "upper_bound_topical": 0.98,
    "nhdp_partial_full_vocab": 0.59,
    "nhdp_partial_topical": 0.72,
}


@dataclass
class PerplexityReport:
    perplexity: float
    log_likelihood: float
    n_scored: int
    n_oov: int
    per_doc_log: np.ndarray
    per_doc_tokens: np.ndarray


@dataclass
class MetricRecord:
    name: str
    value: float
    seed: int = 0
    regime: str = ""
    sweep: int = -1
    wall_ms: float = 0.0


def write_metrics_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "value", "seed", "regime", "sweep", "wall_ms"])
        for r in records:
            writer.writerow(
                [r.name, repr(float(r.value)), r.seed, r.regime, r.sweep, repr(float(r.wall_ms))]
            )


def read_metrics_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["name", "value", "seed", "regime", "sweep", "wall_ms"]:
            raise ValueError(f"unexpected metrics header: {header}")
        for row in reader:
            out.append(
                MetricRecord(
                    name=row[0],
                    value=float(row[1]),
                    seed=int(row[2]),
                    regime=row[3],
                    sweep=int(row[4]),
                    wall_ms=float(row[5]),
                )
            )
    return out


def path_word_matrix(sample: PosteriorSample) -> np.ndarray:
    """Predictive word distribution for each top-level dish, plus one row
    for a brand-new dish, with all deeper levels marginalized out under
    the frozen counts.

    Row p of the result is p(w | z^L = p): the chain of per-restaurant
    predictives from level L down to the topic-word counts.  The final
    row routes through new dishes at every level and bottoms out at the
    uniform emission 1/V.
    """
    h = sample.hyper
    V = sample.V
    eta = h.eta
    A = np.empty((sample.K[0] + 1, V))
    A[:-1] = (sample.nw + eta) / (sample.nw_sum + V * eta)[:, None]
    A[-1] = 1.0 / V
    for l in range(1, h.L + 1):
        n = np.asarray(sample.n[l - 1], dtype=np.float64)
        nsum = n.sum(axis=1)
        alpha = h.alpha[l - 1]
        beta = np.asarray(sample.beta[l - 1], dtype=np.float64)
        beta_new = float(sample.beta_new[l - 1])
        T = np.empty((sample.K[l] + 1, sample.K[l - 1] + 1))
        T[:-1, :-1] = (n + alpha * beta) / (nsum + alpha)[:, None]
        T[:-1, -1] = alpha * beta_new / (nsum + alpha)
        T[-1, :-1] = beta
        T[-1, -1] = beta_new
        A = T @ A
    return A


def _doc_token_probs(
    sample: PosteriorSample,
    A: np.ndarray,
    fold_words: np.ndarray,
    score_words: np.ndarray,
    fold_sweeps: int,
    rng: Rng,
) -> np.ndarray:
    """Per-token predictive probabilities of `score_words` for one test
    document after folding in `fold_words` with document-local Gibbs."""
    h = sample.hyper
    L = h.L
    KL = sample.K[L]
    V = sample.V
    alpha = h.alpha[L]
    prior = alpha * np.asarray(sample.beta[L], dtype=np.float64)
    prior_new = alpha * float(sample.beta_new[L])

    n_doc = np.zeros(KL, dtype=np.float64)
    if KL > 0 and fold_words.size:
        like = np.empty((fold_words.size, KL))
        for i, w in enumerate(fold_words):
            like[i] = A[:KL, w] if w < V else 1.0
        # Initialize each token independently from prior x likelihood
        # (no within-document feedback) so the subsequent Gibbs passes
        # start from the per-token evidence rather than from whichever
        # dish the first few tokens happened to pile onto.
        assign = np.empty(fold_words.size, dtype=np.int64)
        for i in range(fold_words.size):
            assign[i] = sample_categorical(prior * like[i], rng)
        n_doc += np.bincount(assign, minlength=KL)
        for _ in range(fold_sweeps):
            for i in range(fold_words.size):
                n_doc[assign[i]] -= 1
                assign[i] = sample_categorical((n_doc + prior) * like[i], rng)
                n_doc[assign[i]] += 1

    mix = np.append(n_doc + prior, prior_new)
    mix /= mix.sum()
    word_probs = mix @ A
    out = np.empty(score_words.size)
    for i, w in enumerate(score_words):
        out[i] = word_probs[w] if w < V else 1.0 / V
    return out


def perplexity_report(
    samples,
    test_corpus: Corpus,
    fold_sweeps: int = 10,
    rng: Rng | None = None,
) -> PerplexityReport:
    """Document-completion perplexity with full per-document detail."""
    samples = list(samples)
    if not samples:
        raise ValueError("need at least one posterior sample")
    V = samples[0].V
    for s in samples:
        if s.V != V:
            raise ValueError(f"posterior samples disagree on vocabulary size: {s.V} vs {V}")
    if rng is None:
        rng = Rng(0, stream=7)

    folds = []
    scores = []
    for doc in test_corpus.docs:
        folds.append(np.asarray(doc[0::2], dtype=np.int64))
        scores.append(np.asarray(doc[1::2], dtype=np.int64))
    n_scored = int(sum(s.size for s in scores))
    if n_scored == 0:
        raise ValueError("held-out set has no tokens to score")

    per_doc_log = np.zeros(test_corpus.M)
    per_doc_tokens = np.array([s.size for s in scores], dtype=np.int64)
    n_oov = int(sum(int(np.sum(s >= V)) for s in scores))
    matrices = [path_word_matrix(s) for s in samples]
    for j in range(test_corpus.M):
        if scores[j].size == 0:
            continue
        acc = np.zeros(scores[j].size)
        for sample, A in zip(samples, matrices):
            acc += _doc_token_probs(sample, A, folds[j], scores[j], fold_sweeps, rng)
        acc /= len(samples)
        per_doc_log[j] = float(np.sum(np.log(acc)))

    total = float(per_doc_log.sum())
    return PerplexityReport(
        perplexity=float(np.exp(-total / n_scored)),
        log_likelihood=total,
        n_scored=n_scored,
        n_oov=n_oov,
        per_doc_log=per_doc_log,
        per_doc_tokens=per_doc_tokens,
    )


def perplexity(samples, test_corpus: Corpus, fold_sweeps: int = 10, rng: Rng | None = None) -> float:
    """Exponentiated negative mean per-token held-out log likelihood."""
    return perplexity_report(samples, test_corpus, fold_sweeps, rng).perplexity


def cosine_contingency(true_vectors: np.ndarray, discovered: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities between two stacks of nonnegative
    contribution vectors (rows).  Errors on all-zero rows."""
    H = np.atleast_2d(np.asarray(true_vectors, dtype=np.float64))
    N = np.atleast_2d(np.asarray(discovered, dtype=np.float64))
    if H.shape[1] != N.shape[1]:
        raise ValueError(
            f"contribution vectors have mismatched lengths: {H.shape[1]} vs {N.shape[1]}"
        )
    if np.any(H < 0) or np.any(N < 0):
        raise ValueError("contribution vectors must be nonnegative")
    hn = np.linalg.norm(H, axis=1)
    nn = np.linalg.norm(N, axis=1)
    if np.any(hn == 0) or np.any(nn == 0):
        raise ValueError("contribution vectors must not be all-zero")
    return (H / hn[:, None]) @ (N / nn[:, None]).T


def nmi_from_similarity(sim: np.ndarray) -> float:
    """Normalized mutual information of the joint obtained by normalizing
    a nonnegative similarity matrix over all pairs; normalizer is the
    mean of the two marginal entropies."""
    S = np.asarray(sim, dtype=np.float64)
    if S.ndim != 2 or S.size == 0:
        raise ValueError("similarity matrix must be 2-D and nonempty")
    if np.any(S < 0):
        raise ValueError("similarities must be nonnegative")
    Z = S.sum()
    if Z <= 0:
        raise ValueError("similarity matrix has no mass")
    P = S / Z
    ph = P.sum(axis=1)
    pn = P.sum(axis=0)
    mask = P > 0
    outer = ph[:, None] * pn[None, :]
    I = float(np.sum(P[mask] * (np.log(P[mask]) - np.log(outer[mask]))))
    Hh = float(-np.sum(ph[ph > 0] * np.log(ph[ph > 0])))
    Hn = float(-np.sum(pn[pn > 0] * np.log(pn[pn > 0])))
    denom = 0.5 * (Hh + Hn)
    if denom == 0.0:
        # Both sides are a single cluster: degenerate perfect agreement.
        return 1.0
    value = I / denom
    if not -1e-9 <= value <= 1 + 1e-9:
        raise ValueError(f"normalized mutual information {value} escaped [0, 1]")
    return float(min(max(value, 0.0), 1.0))


def nmi_hidden_authors(true_vectors, discovered) -> float:
    """NMI between true and discovered per-document contribution vectors
    (rows = entities, columns = documents), in [0, 1]."""
    return nmi_from_similarity(cosine_contingency(true_vectors, discovered))


def extract_contributions(sample: PosteriorSample) -> np.ndarray:
    """Per-entity contribution vectors: row n gives, for each document,
    the number of its tokens attributed to top-level dish n."""
    L = sample.hyper.L
    if L < 1:
        raise ValueError("contribution vectors need at least one entity level (L >= 1)")
    return np.asarray(sample.n[L], dtype=np.float64).T.copy()


def _ungrouped(corpus: Corpus) -> Corpus:
    tokens = (
        np.concatenate(corpus.docs) if corpus.total_tokens else np.empty(0, dtype=np.int64)
    )
    return Corpus(docs=[tokens.astype(np.int64)], vocab=list(corpus.vocab))


def benchmark_schemes(
    corpus: Corpus,
    hyper,
    sweeps: int,
    seed: int = 0,
    mode: str = "ungrouped2",
) -> list:
    """Run the direct scheme and the matching franchise scheme on the
    same corpus/hyper/seed and record per-sweep wall times, cumulative
    times, and dish-count trajectories.

    mode "hdp": grouped single-level model (documents as restaurants).
    mode "ungrouped2": two-level model over one pooled token collection.
    Timing runs are strictly serial.
    """
    from .gibbs_crf import HdpCrfState, U2CrfState, crf_sweep
    from .gibbs_direct import sweep as direct_sweep
    from .state import new_state

    if mode not in ("hdp", "ungrouped2"):
        raise ValueError(f"unknown benchmark mode {mode!r}")
    if sweeps == 0:
        return []

    records: list = []
    if mode == "hdp":
        direct_corpus = corpus
        if hyper.L != 0:
            raise ValueError("mode 'hdp' benchmarks the single-level model; build Hyper with L=0")
    else:
        direct_corpus = _ungrouped(corpus)
        if hyper.L != 1:
            raise ValueError(
                "mode 'ungrouped2' benchmarks the two-level model; build Hyper with L=1"
            )

    t0 = time.perf_counter()
    state = new_state(direct_corpus, None, hyper, Rng(seed, stream=1))
    init_direct = time.perf_counter() - t0
    total = 0.0
    for t in range(sweeps):
        stats = direct_sweep(state, resample_hypers=False)
        total += stats.seconds
        records.append(
            MetricRecord(
                name="direct/sweep_seconds",
                value=stats.seconds,
                seed=seed,
                regime="none",
                sweep=t + 1,
                wall_ms=stats.seconds * 1e3,
            )
        )
        for l, k in enumerate(stats.K):
            records.append(
                MetricRecord(
                    name=f"direct/K{l}",
                    value=float(k),
                    seed=seed,
                    regime="none",
                    sweep=t + 1,
                    wall_ms=0.0,
                )
            )
    records.append(
        MetricRecord("direct/init_seconds", init_direct, seed, "none", 0, init_direct * 1e3)
    )
    records.append(MetricRecord("direct/total_seconds", total, seed, "none", sweeps, total * 1e3))
    records.append(
        MetricRecord("direct/mean_sweep_seconds", total / sweeps, seed, "none", sweeps, 0.0)
    )

    t0 = time.perf_counter()
    if mode == "hdp":
        crf = HdpCrfState(corpus, hyper, Rng(seed, stream=2))
    else:
        crf = U2CrfState(direct_corpus, hyper, Rng(seed, stream=2))
    init_crf = time.perf_counter() - t0
    total_crf = 0.0
    for t in range(sweeps):
        stats = crf_sweep(crf)
        total_crf += stats.seconds
        records.append(
            MetricRecord(
                name="ncrf/sweep_seconds",
                value=stats.seconds,
                seed=seed,
                regime="none",
                sweep=t + 1,
                wall_ms=stats.seconds * 1e3,
            )
        )
        for l, k in enumerate(stats.K):
            records.append(
                MetricRecord(
                    name=f"ncrf/K{l}",
                    value=float(k),
                    seed=seed,
                    regime="none",
                    sweep=t + 1,
                    wall_ms=0.0,
                )
            )
        records.append(
            MetricRecord(
                name="ncrf/weight_evals",
                value=float(stats.weight_evals),
                seed=seed,
                regime="none",
                sweep=t + 1,
                wall_ms=0.0,
            )
        )
    records.append(MetricRecord("ncrf/init_seconds", init_crf, seed, "none", 0, init_crf * 1e3))
    records.append(
        MetricRecord("ncrf/total_seconds", total_crf, seed, "none", sweeps, total_crf * 1e3)
    )
    records.append(
        MetricRecord("ncrf/mean_sweep_seconds", total_crf / sweeps, seed, "none", sweeps, 0.0)
    )
    return records
