"""Exact small-model posteriors and finite-truncation constructions.

``enumerate_posterior`` walks every canonical assignment configuration of
a tiny corpus (at most 8 tokens) and computes its exact joint probability
in closed form, marginalizing the mixing weights analytically:

* restaurant weights per level integrate to Dirichlet-multinomial terms,
  expanded over latent table counts with unsigned Stirling numbers of the
  first kind;
* the shared dish popularity at each level is handled either by the
  partition probability of the table-to-dish process (``model="crf"``,
  the limit object the samplers target) or by the moments of a symmetric
  Dirichlet(gamma/K) (``model="finite"``, the fixed-truncation
  construction whose error must shrink as K grows);
* topics integrate to the usual Dirichlet-multinomial word term.

Truncation enters the ``crf`` backend only through the enumeration cap
(configurations with more than K[l] dishes at level l are outside the
enumerated support); in the ``finite`` backend it is the model itself.

Everything runs in log space; normalization uses stable log-sum-exp.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .corpus import Corpus
from .randdist import Rng, sample_dirichlet
from .state import Hyper

__all__ = [
    "TruncSpec",
    "ExactPosterior",
    "enumerate_posterior",
    "finite_predictive",
    "finite_forward_sampler",
    "canonical_labels",
    "canonical_config",
]

MAX_ORACLE_TOKENS = 8
MAX_ORACLE_CONFIGS = 10_000_000

# log |s(n, m)|, unsigned Stirling numbers of the first kind, n <= 12.
_S_MAX = 12


def _stirling1_log_table(n_max: int) -> np.ndarray:
    table = np.full((n_max + 1, n_max + 1), -np.inf)
    table[0, 0] = 0.0
    for n in range(1, n_max + 1):
        for m in range(1, n + 1):
            terms = []
            if m <= n - 1:
                terms.append(np.log(n - 1) + table[n - 1, m])
            terms.append(table[n - 1, m - 1])
            table[n, m] = logsumexp(terms)
    return table


_LOG_STIRLING1 = _stirling1_log_table(_S_MAX)


@dataclass
class TruncSpec:
    """Truncation of the nested model: dish caps K[l] per level and,
    for the forward construction, table caps T[l] per level (scalar or
    one cap per restaurant).  ``hyper`` rides along so a TruncSpec fully
    specifies a finite model."""

    K: list
    T: list | None = None
    hyper: Hyper | None = None

    def __post_init__(self):
        if np.isscalar(self.K):
            # A bare integer caps every level the spec is used with; the
            # depth comes from the Hyper at hand.
            levels = (self.hyper.L + 1) if self.hyper is not None else 1
            self.K = [int(self.K)] * levels
        else:
            self.K = [int(k) for k in self.K]
        if any(k < 1 for k in self.K):
            raise ValueError("every truncation level needs K >= 1")

    def for_depth(self, L: int) -> "TruncSpec":
        """This spec with K broadcast or checked against depth L."""
        if len(self.K) == L + 1:
            return self
        if len(self.K) == 1:
            return TruncSpec([self.K[0]] * (L + 1), self.T, self.hyper)
        raise ValueError(
            f"truncation has {len(self.K)} levels but the model has {L + 1}"
        )

    @property
    def L(self) -> int:
        return len(self.K) - 1


@dataclass
class ExactPosterior:
    """Normalized exact posterior over canonical configurations.

    Keys are tuples (one per level, level 0 first) of per-token dish
    labels in order of first appearance.  ``log_evidence`` is the log
    marginal likelihood of the words over the enumerated support.
    """

    table: dict
    log_evidence: float
    model: str

    def prob(self, key) -> float:
        return self.table.get(key, 0.0)

    def items(self):
        return self.table.items()

    def __len__(self):
        return len(self.table)

    def total(self) -> float:
        return float(sum(self.table.values()))

    def level_marginal(self, level: int) -> dict:
        """Marginal over the canonical labeling of one level."""
        out: dict = {}
        for key, p in self.table.items():
            out[key[level]] = out.get(key[level], 0.0) + p
        return out


def canonical_labels(labels) -> tuple:
    """Relabel a sequence by order of first appearance: (0, then 1, ...)."""
    mapping: dict = {}
    out = []
    for v in labels:
        v = int(v)
        if v not in mapping:
            mapping[v] = len(mapping)
        out.append(mapping[v])
    return tuple(out)


def canonical_config(z_levels) -> tuple:
    """Canonical configuration key (level 0 first) for per-level flat
    label arrays; matches the keys enumerate_posterior produces, so a
    sampler state can be tallied against the exact posterior."""
    return tuple(canonical_labels(np.asarray(z).tolist()) for z in z_levels)


def _rgs_strings(n: int, cap: int):
    """Restricted growth strings of length n with at most cap distinct values."""
    if n == 0:
        yield ()
        return
    digits = [0] * n
    maxes = [0] * n
    while True:
        yield tuple(digits)
        pos = n - 1
        while pos > 0:
            limit = min(maxes[pos - 1] + 1, cap - 1)
            if digits[pos] < limit:
                digits[pos] += 1
                maxes[pos] = max(maxes[pos - 1], digits[pos])
                for q in range(pos + 1, n):
                    digits[q] = 0
                    maxes[q] = maxes[q - 1]
                break
            pos -= 1
        else:
            return


def _count_rgs(n: int, cap: int) -> int:
    """Number of restricted growth strings of length n with <= cap blocks."""
    if n == 0:
        return 1
    # current[b] holds Stirling numbers of the second kind S(i, b).
    current = np.zeros(n + 1, dtype=object)
    current[1] = 1
    for _ in range(2, n + 1):
        nxt = np.zeros(n + 1, dtype=object)
        for b in range(1, n + 1):
            nxt[b] = current[b] * b + current[b - 1]
        current = nxt
    return int(sum(current[b] for b in range(1, min(cap, n) + 1)))


def _counts_matrix(restaurants, dishes, R: int, K: int) -> np.ndarray:
    mat = np.zeros((R, K), dtype=np.int64)
    for r, k in zip(restaurants, dishes):
        mat[r, k] += 1
    return mat


def _log_rising(a: float, n: float) -> float:
    return float(gammaln(a + n) - gammaln(a))


def _level_term_crf(n_mat: np.ndarray, alpha: float, gamma: float) -> float:
    """Exact log probability of one level's dish layer given its
    restaurant layer under the infinite model, summing the latent table
    counts of the seating construction."""
    R, K = n_mat.shape
    if K == 0:
        return 0.0
    base = -sum(_log_rising(alpha, n_mat[r].sum()) for r in range(R))
    cells = [(int(n_mat[r, k]), k) for r in range(R) for k in range(K) if n_mat[r, k] > 0]
    log_alpha = np.log(alpha)
    acc = []
    for m_vec in itertools.product(*[range(1, n + 1) for n, _ in cells]):
        log_w = 0.0
        col = np.zeros(K, dtype=np.int64)
        for (n, k), m in zip(cells, m_vec):
            log_w += _LOG_STIRLING1[n, m] + m * log_alpha
            col[k] += m
        total = int(col.sum())
        log_w += K * np.log(gamma)
        log_w += float(np.sum(gammaln(col[col > 0])))
        log_w -= _log_rising(gamma, total)
        acc.append(log_w)
    return base + float(logsumexp(acc))


def _level_term_finite(n_mat: np.ndarray, alpha: float, gamma: float, K_trunc: int) -> float:
    """Same layer probability under the fixed-truncation construction
    (symmetric Dirichlet(gamma/K) dish weights), for the canonical
    labeling class (all injective relabelings folded in)."""
    R, K = n_mat.shape
    if K == 0:
        return 0.0
    if K > K_trunc:
        return -np.inf
    base = float(np.sum(np.log(K_trunc - np.arange(K))))
    base -= sum(_log_rising(alpha, n_mat[r].sum()) for r in range(R))
    cells = [(int(n_mat[r, k]), k) for r in range(R) for k in range(K) if n_mat[r, k] > 0]
    gk = gamma / K_trunc
    log_alpha = np.log(alpha)
    acc = []
    for m_vec in itertools.product(*[range(1, n + 1) for n, _ in cells]):
        log_w = 0.0
        col = np.zeros(K, dtype=np.int64)
        for (n, k), m in zip(cells, m_vec):
            log_w += _LOG_STIRLING1[n, m] + m * log_alpha
            col[k] += m
        log_w += float(np.sum(gammaln(gk + col) - gammaln(gk)))
        log_w -= _log_rising(gamma, int(col.sum()))
        acc.append(log_w)
    return base + float(logsumexp(acc))


def _level_term_dp(counts: np.ndarray, gamma: float) -> float:
    """Plain single-urn partition probability (top level of the ungrouped
    two-level model, where every token draws its dish directly)."""
    counts = counts[counts > 0]
    if counts.size == 0:
        return 0.0
    out = counts.size * np.log(gamma)
    out += float(np.sum(gammaln(counts)))
    out -= _log_rising(gamma, int(counts.sum()))
    return float(out)


def _word_term(z0, words, K: int, V: int, eta: float) -> float:
    nw = np.zeros((K, V), dtype=np.int64)
    for k, w in zip(z0, words):
        nw[k, w] += 1
    out = float(np.sum(gammaln(V * eta) - gammaln(nw.sum(axis=1) + V * eta)))
    nz = nw[nw > 0]
    out += float(np.sum(gammaln(nz + eta) - gammaln(eta)))
    return out


def config_log_joint(
    config,
    doc_of,
    words,
    hyper: Hyper,
    V: int,
    model: str = "crf",
    trunc: TruncSpec | None = None,
    outer_dp: bool = False,
    _cache: dict | None = None,
) -> float:
    """Log joint probability of words and one canonical configuration.

    ``config`` is a tuple of per-level label tuples, level 0 first.  The
    ``crf`` backend computes the infinite model exactly; ``finite``
    computes the truncated construction (requires ``trunc``).
    """
    L = len(config) - 1
    N = len(words)
    for level_labels in config:
        if len(level_labels) != N:
            raise ValueError("config level length disagrees with the corpus")
    if model not in ("crf", "finite"):
        raise ValueError(f"unknown oracle model {model!r}")
    if model == "finite" and trunc is None:
        raise ValueError("the finite backend needs a TruncSpec")

    total = 0.0
    for l in range(L, -1, -1):
        dishes = config[l]
        b_l = (max(dishes) + 1) if N else 0
        if l == L:
            restaurants = [int(d) for d in doc_of]
            R = (max(restaurants) + 1) if N else 0
        else:
            restaurants = config[l + 1]
            R = (max(restaurants) + 1) if N else 0
        key = None
        if _cache is not None:
            key = (l == L and outer_dp, model, l, tuple(restaurants), tuple(dishes))
            if key in _cache:
                total += _cache[key]
                continue
        if l == L and outer_dp:
            counts = np.bincount(np.asarray(dishes, dtype=np.int64), minlength=b_l) if N else np.zeros(0, np.int64)
            if model == "finite":
                K_t = trunc.K[l]
                if b_l > K_t:
                    term = -np.inf
                else:
                    gk = hyper.gamma[l] / K_t
                    term = float(np.sum(np.log(K_t - np.arange(b_l))))
                    term += float(np.sum(gammaln(gk + counts) - gammaln(gk)))
                    term -= _log_rising(hyper.gamma[l], int(counts.sum()))
            else:
                term = _level_term_dp(counts, hyper.gamma[l])
        else:
            mat = _counts_matrix(restaurants, dishes, R, b_l)
            if model == "crf":
                term = _level_term_crf(mat, hyper.alpha[l], hyper.gamma[l])
            else:
                term = _level_term_finite(mat, hyper.alpha[l], hyper.gamma[l], trunc.K[l])
        if _cache is not None and key is not None:
            _cache[key] = term
        total += term
    total += _word_term(config[0], words, (max(config[0]) + 1) if N else 0, V, hyper.eta)
    return float(total)


def enumerate_posterior(
    corpus: Corpus,
    hyper: Hyper,
    trunc: TruncSpec,
    model: str = "crf",
    outer_dp: bool = False,
) -> ExactPosterior:
    """Exact posterior over canonical configurations of a tiny corpus.

    Raises if the corpus exceeds 8 tokens or the configuration space
    exceeds 10^7 (the error message carries the size estimate).
    """
    N = corpus.total_tokens
    if N > MAX_ORACLE_TOKENS:
        raise ValueError(f"oracle enumeration supports at most {MAX_ORACLE_TOKENS} tokens, corpus has {N}")
    trunc = trunc.for_depth(hyper.L)
    size = 1
    for K_l in trunc.K:
        size *= _count_rgs(N, K_l)
    if size > MAX_ORACLE_CONFIGS:
        raise ValueError(f"configuration space has about {size} states, above the {MAX_ORACLE_CONFIGS} limit")

    words = np.concatenate(corpus.docs) if N else np.empty(0, dtype=np.int64)
    doc_of = np.repeat(np.arange(corpus.M), corpus.N)
    L = hyper.L

    level_options = [list(_rgs_strings(N, trunc.K[l])) for l in range(L + 1)]
    cache: dict = {}
    keys = []
    logs = []
    for combo in itertools.product(*level_options):
        lj = config_log_joint(
            tuple(combo), doc_of, words, hyper, corpus.V,
            model=model, trunc=trunc, outer_dp=outer_dp, _cache=cache,
        )
        if lj > -np.inf:
            keys.append(tuple(combo))
            logs.append(lj)
    logs = np.asarray(logs)
    log_evidence = float(logsumexp(logs)) if logs.size else -np.inf
    probs = np.exp(logs - log_evidence) if logs.size else logs
    table = {k: float(p) for k, p in zip(keys, probs)}
    return ExactPosterior(table, log_evidence, model)


def finite_predictive(trunc: TruncSpec, counts, query, level: int = 0) -> float:
    """Predictive of the next draw under the symmetric Dirichlet(gamma/K)
    construction at one level, by conjugacy.

    ``counts`` are per observed dish; ``query`` is an observed dish index
    or the string ``"new"`` (any so-far-unused dish).
    """
    if trunc.hyper is None:
        raise ValueError("TruncSpec.hyper is required for predictive queries")
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    K = trunc.K[level]
    b = counts.size
    if b > K:
        raise ValueError(f"{b} observed dishes exceed the truncation K={K}")
    gamma = float(trunc.hyper.gamma[level])
    n = counts.sum()
    if query == "new":
        return float((K - b) * (gamma / K) / (n + gamma))
    query = int(query)
    if not 0 <= query < b:
        raise ValueError(f"query dish {query} is not among the {b} observed dishes")
    return float((counts[query] + gamma / K) / (n + gamma))


def finite_forward_sampler(trunc: TruncSpec, corpus: Corpus, rng: Rng) -> list:
    """Forward-sample the finite table construction and return the dish
    paths: a list of L+1 arrays (level 0 first) over the flat tokens.

    Per level l the construction draws dish popularity beta[l] from a
    symmetric Dirichlet(gamma[l]/K[l]), per restaurant a table
    distribution from a symmetric Dirichlet(alpha[l]/T[l]) and one dish
    per table from beta[l]; each token walks down picking a table and
    inheriting its dish.
    """
    if trunc.hyper is None:
        raise ValueError("TruncSpec.hyper is required to forward sample")
    if trunc.T is None:
        raise ValueError("TruncSpec.T (table caps) is required to forward sample")
    hyper = trunc.hyper
    L = trunc.L
    if L != hyper.L:
        raise ValueError("truncation depth disagrees with hyper.L")

    T_levels = [trunc.T] * (L + 1) if np.isscalar(trunc.T) else list(trunc.T)
    if len(T_levels) != L + 1:
        raise ValueError(f"T covers {len(T_levels)} levels but the model has {L + 1}")

    def tables_for(l: int, R: int) -> np.ndarray:
        spec = T_levels[l]
        arr = np.asarray(spec, dtype=np.int64)
        if arr.ndim == 0:
            arr = np.full(R, int(arr))
        if arr.shape != (R,) or np.any(arr < 1):
            raise ValueError(f"T[{l}] must be a positive scalar or one cap per restaurant ({R})")
        return arr

    beta = [sample_dirichlet(np.full(trunc.K[l], hyper.gamma[l] / trunc.K[l]), rng) for l in range(L + 1)]
    pi: list = [None] * (L + 1)
    table_dish: list = [None] * (L + 1)
    for l in range(L, -1, -1):
        R = corpus.M if l == L else trunc.K[l + 1]
        T_r = tables_for(l, R)
        pi[l] = [sample_dirichlet(np.full(T_r[r], hyper.alpha[l] / T_r[r]), rng) for r in range(R)]
        cums = [np.cumsum(p) for p in pi[l]]
        pi[l] = cums
        table_dish[l] = [
            np.searchsorted(np.cumsum(beta[l]), rng.uniform(T_r[r]), side="right").clip(0, trunc.K[l] - 1)
            for r in range(R)
        ]

    N = corpus.total_tokens
    z = [np.zeros(N, dtype=np.int64) for _ in range(L + 1)]
    doc_of = np.repeat(np.arange(corpus.M), corpus.N)
    for t in range(N):
        r = int(doc_of[t])
        for l in range(L, -1, -1):
            cum = pi[l][r]
            tb = int(np.searchsorted(cum, rng.uniform() * cum[-1], side="right").clip(0, cum.size - 1))
            dish = int(table_dish[l][r][tb])
            z[l][t] = dish
            r = dish
    return z
