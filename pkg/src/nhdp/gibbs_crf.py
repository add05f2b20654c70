"""Seating-based (franchise) Gibbs samplers for the tractable shapes.

The franchise scheme instantiates tables explicitly.  That is practical
for exactly two shapes of the nested model and both are implemented:

* the single-level grouped process (documents as restaurants over
  topics), with per-token table moves and per-table dish moves;
* the ungrouped two-level process, where each token first draws an
  entity from a plain urn over entity popularity, then a table within
  that entity's restaurant, and tables draw topics from the shared
  popularity.  Token moves touch every (entity, table) pair plus every
  topic, so the per-sweep cost is of order K_entities * max_tables +
  K_topics per token; the sweep counts its weight evaluations so tests
  can pin that scaling.

Deeper grouped variants would have to marginalize jointly over table
assignments at every level, whose state space grows exponentially with
depth; they are deliberately not implemented.  Use the direct scheme for
arbitrary depth.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .corpus import Corpus
from .randdist import Rng, sample_categorical_log
from .state import Hyper, InvariantError, PosteriorSample

__all__ = [
    "HdpCrfState",
    "U2CrfState",
    "CrfSweepStats",
    "hdp_sample_table",
    "hdp_sample_dish",
    "u2_sample_entity",
    "u2_sample_table",
    "u2_sample_dish",
    "crf_sweep",
    "save_crf_checkpoint",
    "load_crf_checkpoint",
]


@dataclass
class CrfSweepStats:
    sweep: int
    K: list
    tables: int
    seconds: float
    weight_evals: int
    log_word: float
    entity_evals: int = 0


def _word_loglike(nw: np.ndarray, nw_sum: np.ndarray, eta: float, V: int) -> float:
    if nw.shape[0] == 0:
        return 0.0
    out = float(np.sum(gammaln(V * eta) - gammaln(nw_sum + V * eta)))
    nz = nw[nw > 0]
    out += float(np.sum(gammaln(nz + eta) - gammaln(eta)))
    return out


class _TopicTable:
    """Shared topic-word bookkeeping with swap-remove label compaction."""

    def __init__(self, V: int, eta: float):
        self.V = V
        self.eta = eta
        self.nw = np.zeros((0, V), dtype=np.int64)
        self.nw_sum = np.zeros(0, dtype=np.int64)
        self.m = np.zeros(0, dtype=np.int64)  # tables serving each topic

    @property
    def K(self) -> int:
        return self.m.size

    def spawn(self) -> int:
        self.nw = np.vstack([self.nw, np.zeros((1, self.V), dtype=np.int64)])
        self.nw_sum = np.append(self.nw_sum, 0)
        self.m = np.append(self.m, 0)
        return self.K - 1

    def word_like(self, w: int) -> np.ndarray:
        return (self.nw[:, w] + self.eta) / (self.nw_sum + self.V * self.eta)

    def block_loglike(self, words: np.ndarray) -> np.ndarray:
        """Log likelihood of a word block under each topic plus a fresh one
        (last slot), via Dirichlet count ratios."""
        uniq, cnt = np.unique(words, return_counts=True)
        total = int(cnt.sum())
        K, V, eta = self.K, self.V, self.eta
        out = np.zeros(K + 1)
        if K:
            cols = self.nw[:, uniq] + eta
            out[:K] = np.sum(gammaln(cols + cnt) - gammaln(cols), axis=1)
            out[:K] -= gammaln(self.nw_sum + V * eta + total) - gammaln(self.nw_sum + V * eta)
        out[K] = float(np.sum(gammaln(eta + cnt) - gammaln(eta)))
        out[K] -= float(gammaln(V * eta + total) - gammaln(V * eta))
        return out


class HdpCrfState:
    """Franchise sampler state for the single-level grouped process."""

    def __init__(self, corpus: Corpus, hyper: Hyper, rng: Rng):
        if hyper.L != 0:
            raise ValueError("the grouped franchise sampler is single-level; build Hyper with L=0")
        self.hyper = hyper.copy()
        self.rng = rng
        self.V = corpus.V
        self.M = corpus.M
        lengths = corpus.N
        self.doc_offset = np.zeros(corpus.M + 1, dtype=np.int64)
        np.cumsum(lengths, out=self.doc_offset[1:])
        self.N_total = int(self.doc_offset[-1])
        self.words = (
            np.concatenate(corpus.docs) if self.N_total else np.empty(0, dtype=np.int64)
        ).astype(np.int64)
        self.topics = _TopicTable(corpus.V, hyper.eta)
        # Per document: table customer counts and table dish labels.
        self.table_n: list = [[] for _ in range(corpus.M)]
        self.table_dish: list = [[] for _ in range(corpus.M)]
        self.token_table = np.full(self.N_total, -1, dtype=np.int64)
        self.sweep = 0
        self.weight_evals = 0
        for j in range(corpus.M):
            for i in range(self.doc_len(j)):
                hdp_sample_table(self, j, i, initializing=True)

    @property
    def K(self) -> int:
        return self.topics.K

    def doc_len(self, j: int) -> int:
        return int(self.doc_offset[j + 1] - self.doc_offset[j])

    def token_index(self, j: int, i: int) -> int:
        return int(self.doc_offset[j] + i)

    def total_tables(self) -> int:
        return int(self.topics.m.sum())

    def _drop_topic_if_empty(self, k: int) -> None:
        if self.topics.m[k] > 0:
            return
        if self.topics.nw_sum[k] != 0:
            raise InvariantError("topic lost all tables while still owning words")
        last = self.topics.K - 1
        if k != last:
            self.topics.nw[k] = self.topics.nw[last]
            self.topics.nw_sum[k] = self.topics.nw_sum[last]
            self.topics.m[k] = self.topics.m[last]
            for j in range(self.M):
                dishes = self.table_dish[j]
                for t in range(len(dishes)):
                    if dishes[t] == last:
                        dishes[t] = k
        self.topics.nw = self.topics.nw[:last].copy()
        self.topics.nw_sum = self.topics.nw_sum[:last].copy()
        self.topics.m = self.topics.m[:last].copy()

    def _remove_token(self, j: int, i: int) -> None:
        t_flat = self.token_index(j, i)
        t = int(self.token_table[t_flat])
        if t < 0:
            raise InvariantError("token is not seated")
        w = int(self.words[t_flat])
        k = self.table_dish[j][t]
        self.table_n[j][t] -= 1
        self.topics.nw[k, w] -= 1
        self.topics.nw_sum[k] -= 1
        self.token_table[t_flat] = -1
        if self.table_n[j][t] == 0:
            del self.table_n[j][t]
            del self.table_dish[j][t]
            sel = self.token_table[self.doc_offset[j] : self.doc_offset[j + 1]]
            sel[sel > t] -= 1
            self.topics.m[k] -= 1
            self._drop_topic_if_empty(k)

    def config(self) -> tuple:
        """Canonical per-token topic labels (tuple of one level)."""
        from .oracle import canonical_labels

        z0 = [
            self.table_dish[int(j)][int(self.token_table[self.doc_offset[j] + i])]
            for j in range(self.M)
            for i in range(self.doc_len(j))
        ]
        return (canonical_labels(z0),)

    def snapshot(self) -> PosteriorSample:
        """Direct-form snapshot: per-doc dish customer counts plus
        plug-in stick weights from table counts, so the shared held-out
        evaluator can score franchise-trained models."""
        K = self.K
        n0 = np.zeros((self.M, K), dtype=np.int64)
        for j in range(self.M):
            for t, k in enumerate(self.table_dish[j]):
                n0[j, k] += self.table_n[j][t]
        gamma = self.hyper.gamma[0]
        total = self.topics.m.sum() + gamma
        return PosteriorSample(
            hyper=self.hyper.copy(),
            K=[K],
            n=[n0],
            beta=[self.topics.m / total],
            beta_new=np.array([gamma / total]),
            nw=self.topics.nw.copy(),
            nw_sum=self.topics.nw_sum.copy(),
            dish_author=[None] * K,
            regime="none",
            M=self.M,
            V=self.V,
            sweep=self.sweep,
        )

    def validate(self) -> str | None:
        nw = np.zeros_like(self.topics.nw)
        for j in range(self.M):
            counts = np.zeros(len(self.table_n[j]), dtype=np.int64)
            for i in range(self.doc_len(j)):
                t_flat = self.token_index(j, i)
                t = int(self.token_table[t_flat])
                if not 0 <= t < len(self.table_n[j]):
                    return f"token ({j}, {i}) points at a missing table"
                counts[t] += 1
                nw[self.table_dish[j][t], int(self.words[t_flat])] += 1
            if not np.array_equal(counts, np.array(self.table_n[j], dtype=np.int64)):
                return f"table counts disagree in document {j}"
            if any(c == 0 for c in self.table_n[j]):
                return f"document {j} keeps an empty table"
        if not np.array_equal(nw, self.topics.nw):
            return "topic-word counts disagree with seating"
        m = np.zeros(self.K, dtype=np.int64)
        for j in range(self.M):
            for k in self.table_dish[j]:
                m[k] += 1
        if not np.array_equal(m, self.topics.m):
            return "table-per-topic counts disagree with seating"
        if np.any(m == 0):
            return "topic without tables was not dropped"
        return None


def hdp_sample_table(state: HdpCrfState, j: int, i: int, initializing: bool = False) -> None:
    """Reseat token (j, i): existing tables by customer count times topic
    likelihood, or a new table scored by the marginal over its dish."""
    if not initializing:
        state._remove_token(j, i)
    t_flat = state.token_index(j, i)
    w = int(state.words[t_flat])
    h = state.hyper
    alpha, gamma = h.alpha[0], h.gamma[0]
    fw = state.topics.word_like(w)
    f_new_dish = 1.0 / state.V
    m_total = state.topics.m.sum()
    new_table_marginal = (state.topics.m @ fw + gamma * f_new_dish) / (m_total + gamma)

    n_t = np.asarray(state.table_n[j], dtype=np.float64)
    dish_t = np.asarray(state.table_dish[j], dtype=np.int64)
    lw = np.empty(n_t.size + 1)
    if n_t.size:
        lw[:-1] = np.log(n_t) + np.log(fw[dish_t])
    lw[-1] = np.log(alpha) + np.log(new_table_marginal)
    state.weight_evals += lw.size + state.topics.K
    choice = sample_categorical_log(lw, state.rng)

    if choice < n_t.size:
        t = choice
        k = int(dish_t[choice])
        state.table_n[j][t] += 1
    else:
        dish_lw = np.empty(state.topics.K + 1)
        if state.topics.K:
            dish_lw[:-1] = np.log(state.topics.m) + np.log(fw)
        dish_lw[-1] = np.log(gamma) + np.log(f_new_dish)
        dk = sample_categorical_log(dish_lw, state.rng)
        k = state.topics.spawn() if dk == state.topics.K else dk
        state.topics.m[k] += 1
        state.table_n[j].append(1)
        state.table_dish[j].append(k)
        t = len(state.table_n[j]) - 1
    state.token_table[t_flat] = t
    state.topics.nw[k, w] += 1
    state.topics.nw_sum[k] += 1


def hdp_sample_dish(state: HdpCrfState, j: int, t: int) -> None:
    """Reassign table (j, t)'s dish: table counts times the block
    likelihood of every word at the table, or a fresh dish."""
    k_old = state.table_dish[j][t]
    sel = state.token_table[state.doc_offset[j] : state.doc_offset[j + 1]] == t
    block = state.words[state.doc_offset[j] : state.doc_offset[j + 1]][sel]
    uniq, cnt = np.unique(block, return_counts=True)
    state.topics.nw[k_old, uniq] -= cnt
    state.topics.nw_sum[k_old] -= int(cnt.sum())
    state.topics.m[k_old] -= 1

    lw = state.topics.block_loglike(block)
    K = state.topics.K
    prior = np.empty(K + 1)
    prior[:K] = state.topics.m
    prior[K] = state.hyper.gamma[0]
    with np.errstate(divide="ignore"):
        lw = lw + np.log(prior)
    state.weight_evals += lw.size
    choice = sample_categorical_log(lw, state.rng)
    k = state.topics.spawn() if choice == K else choice
    state.table_dish[j][t] = k
    state.topics.m[k] += 1
    state.topics.nw[k, uniq] += cnt
    state.topics.nw_sum[k] += int(cnt.sum())
    if k != k_old:
        state._drop_topic_if_empty(k_old)


class U2CrfState:
    """Franchise sampler state for the ungrouped two-level process.

    All tokens form one collection.  Entity popularity is a plain urn
    (concentration gamma[1]); each entity is a restaurant over topic
    tables (concentration alpha[0]); tables draw topics from the shared
    urn (concentration gamma[0]).  alpha[1] is unused by construction.
    """

    def __init__(self, corpus: Corpus, hyper: Hyper, rng: Rng):
        if hyper.L != 1:
            raise ValueError("the ungrouped franchise sampler is two-level; build Hyper with L=1")
        self.hyper = hyper.copy()
        self.rng = rng
        self.V = corpus.V
        self.words = (
            np.concatenate(corpus.docs) if corpus.total_tokens else np.empty(0, dtype=np.int64)
        ).astype(np.int64)
        self.N_total = int(self.words.size)
        self.topics = _TopicTable(corpus.V, hyper.eta)
        self.token_entity = np.full(self.N_total, -1, dtype=np.int64)
        self.token_table = np.full(self.N_total, -1, dtype=np.int64)
        self.entity_n = np.zeros(0, dtype=np.int64)  # tokens per entity
        self.table_n: list = []  # per entity: list of table counts
        self.table_dish: list = []  # per entity: list of topic labels
        self.sweep = 0
        self.weight_evals = 0
        self.entity_update_evals = 0
        for i in range(self.N_total):
            u2_sample_entity(self, i, initializing=True)

    @property
    def K_topics(self) -> int:
        return self.topics.K

    @property
    def K_entities(self) -> int:
        return self.entity_n.size

    def total_tables(self) -> int:
        return int(self.topics.m.sum())

    def max_tables(self) -> int:
        return max((len(t) for t in self.table_n), default=0)

    def _spawn_entity(self) -> int:
        self.entity_n = np.append(self.entity_n, 0)
        self.table_n.append([])
        self.table_dish.append([])
        return self.K_entities - 1

    def _drop_topic_if_empty(self, k: int) -> None:
        if self.topics.m[k] > 0:
            return
        last = self.topics.K - 1
        if k != last:
            self.topics.nw[k] = self.topics.nw[last]
            self.topics.nw_sum[k] = self.topics.nw_sum[last]
            self.topics.m[k] = self.topics.m[last]
            for dishes in self.table_dish:
                for t in range(len(dishes)):
                    if dishes[t] == last:
                        dishes[t] = k
        self.topics.nw = self.topics.nw[:last].copy()
        self.topics.nw_sum = self.topics.nw_sum[:last].copy()
        self.topics.m = self.topics.m[:last].copy()

    def _drop_entity_if_empty(self, r: int) -> None:
        if self.entity_n[r] > 0:
            return
        if self.table_n[r]:
            raise InvariantError("entity lost all tokens while keeping tables")
        last = self.K_entities - 1
        if r != last:
            self.entity_n[r] = self.entity_n[last]
            self.table_n[r] = self.table_n[last]
            self.table_dish[r] = self.table_dish[last]
            self.token_entity[self.token_entity == last] = r
        self.entity_n = self.entity_n[:last].copy()
        del self.table_n[last]
        del self.table_dish[last]

    def _remove_token(self, i: int) -> None:
        r = int(self.token_entity[i])
        t = int(self.token_table[i])
        if r < 0 or t < 0:
            raise InvariantError("token is not seated")
        w = int(self.words[i])
        k = self.table_dish[r][t]
        self.table_n[r][t] -= 1
        self.entity_n[r] -= 1
        self.topics.nw[k, w] -= 1
        self.topics.nw_sum[k] -= 1
        self.token_entity[i] = -1
        self.token_table[i] = -1
        if self.table_n[r][t] == 0:
            del self.table_n[r][t]
            del self.table_dish[r][t]
            sel = (self.token_entity == r) & (self.token_table > t)
            self.token_table[sel] -= 1
            self.topics.m[k] -= 1
            self._drop_topic_if_empty(k)
        self._drop_entity_if_empty(r)

    def config(self) -> tuple:
        """Canonical (topic labels, entity labels) per token."""
        from .oracle import canonical_labels

        z0 = [
            self.table_dish[int(self.token_entity[i])][int(self.token_table[i])]
            for i in range(self.N_total)
        ]
        return (canonical_labels(z0), canonical_labels(self.token_entity.tolist()))

    def snapshot(self) -> PosteriorSample:
        K0, K1 = self.K_topics, self.K_entities
        n0 = np.zeros((K1, K0), dtype=np.int64)
        for r in range(K1):
            for t, k in enumerate(self.table_dish[r]):
                n0[r, k] += self.table_n[r][t]
        n1 = self.entity_n.reshape(1, -1).copy()
        g0, g1 = self.hyper.gamma[0], self.hyper.gamma[1]
        t0 = self.topics.m.sum() + g0
        t1 = self.entity_n.sum() + g1
        return PosteriorSample(
            hyper=self.hyper.copy(),
            K=[K0, K1],
            n=[n0, n1],
            beta=[self.topics.m / t0, self.entity_n / t1],
            beta_new=np.array([g0 / t0, g1 / t1]),
            nw=self.topics.nw.copy(),
            nw_sum=self.topics.nw_sum.copy(),
            dish_author=[None] * K1,
            regime="none",
            M=1,
            V=self.V,
            sweep=self.sweep,
        )

    def validate(self) -> str | None:
        nw = np.zeros_like(self.topics.nw)
        ent = np.zeros(self.K_entities, dtype=np.int64)
        tab = [np.zeros(len(t), dtype=np.int64) for t in self.table_n]
        for i in range(self.N_total):
            r = int(self.token_entity[i])
            t = int(self.token_table[i])
            if not 0 <= r < self.K_entities or not 0 <= t < len(self.table_n[r]):
                return f"token {i} has a dangling seat"
            ent[r] += 1
            tab[r][t] += 1
            nw[self.table_dish[r][t], int(self.words[i])] += 1
        if not np.array_equal(ent, self.entity_n):
            return "entity customer counts disagree"
        for r in range(self.K_entities):
            if not np.array_equal(tab[r], np.array(self.table_n[r], dtype=np.int64)):
                return f"table counts disagree for entity {r}"
            if any(c == 0 for c in self.table_n[r]):
                return f"entity {r} keeps an empty table"
        if np.any(ent == 0):
            return "empty entity was not dropped"
        if not np.array_equal(nw, self.topics.nw):
            return "topic-word counts disagree with seating"
        m = np.zeros(self.K_topics, dtype=np.int64)
        for dishes in self.table_dish:
            for k in dishes:
                m[k] += 1
        if not np.array_equal(m, self.topics.m):
            return "table-per-topic counts disagree"
        if np.any(m == 0):
            return "topic without tables was not dropped"
        return None


def _u2_new_table_marginal(state: U2CrfState, fw: np.ndarray) -> float:
    gamma0 = state.hyper.gamma[0]
    m_total = state.topics.m.sum()
    return float((state.topics.m @ fw + gamma0 / state.V) / (m_total + gamma0))


def u2_sample_entity(state: U2CrfState, i: int, initializing: bool = False) -> None:
    """Reassign token i's entity by marginalizing its table choice, then
    seat it at a table within the chosen entity."""
    if not initializing:
        state._remove_token(i)
    w = int(state.words[i])
    h = state.hyper
    alpha0, gamma1 = h.alpha[0], h.gamma[1]
    fw = state.topics.word_like(w)
    f_tnew = _u2_new_table_marginal(state, fw)

    R = state.K_entities
    lw = np.empty(R + 1)
    evals = state.topics.K + R
    for r in range(R):
        dish_t = np.asarray(state.table_dish[r], dtype=np.int64)
        n_t = np.asarray(state.table_n[r], dtype=np.float64)
        evals += n_t.size
        like = (n_t @ fw[dish_t] + alpha0 * f_tnew) / (state.entity_n[r] + alpha0)
        lw[r] = np.log(state.entity_n[r]) + np.log(like)
    lw[R] = np.log(gamma1) + np.log(f_tnew)
    state.weight_evals += evals
    state.entity_update_evals += evals
    choice = sample_categorical_log(lw, state.rng)
    r = state._spawn_entity() if choice == R else choice
    u2_sample_table(state, i, r, fw=fw, f_tnew=f_tnew)


def u2_sample_table(state: U2CrfState, i: int, r: int, fw=None, f_tnew=None) -> None:
    """Seat token i at a table of entity r (existing by count times topic
    likelihood, or new by the dish marginal) and update all counts."""
    w = int(state.words[i])
    if fw is None:
        fw = state.topics.word_like(w)
    if f_tnew is None:
        f_tnew = _u2_new_table_marginal(state, fw)
    alpha0, gamma0 = state.hyper.alpha[0], state.hyper.gamma[0]

    dish_t = np.asarray(state.table_dish[r], dtype=np.int64)
    n_t = np.asarray(state.table_n[r], dtype=np.float64)
    lw = np.empty(n_t.size + 1)
    if n_t.size:
        lw[:-1] = np.log(n_t) + np.log(fw[dish_t])
    lw[-1] = np.log(alpha0) + np.log(f_tnew)
    state.weight_evals += lw.size
    choice = sample_categorical_log(lw, state.rng)

    if choice < n_t.size:
        t = choice
        k = int(dish_t[choice])
        state.table_n[r][t] += 1
    else:
        K = state.topics.K
        dish_lw = np.empty(K + 1)
        if K:
            dish_lw[:-1] = np.log(state.topics.m) + np.log(fw)
        dish_lw[-1] = np.log(gamma0) - np.log(state.V)
        dk = sample_categorical_log(dish_lw, state.rng)
        k = state.topics.spawn() if dk == K else dk
        state.topics.m[k] += 1
        state.table_n[r].append(1)
        state.table_dish[r].append(k)
        t = len(state.table_n[r]) - 1
    state.token_entity[i] = r
    state.token_table[i] = t
    state.entity_n[r] += 1
    state.topics.nw[k, w] += 1
    state.topics.nw_sum[k] += 1


def u2_sample_dish(state: U2CrfState, r: int, t: int) -> None:
    """Reassign the topic of table (r, t) by table counts times the block
    likelihood of the table's words."""
    k_old = state.table_dish[r][t]
    sel = (state.token_entity == r) & (state.token_table == t)
    block = state.words[sel]
    uniq, cnt = np.unique(block, return_counts=True)
    state.topics.nw[k_old, uniq] -= cnt
    state.topics.nw_sum[k_old] -= int(cnt.sum())
    state.topics.m[k_old] -= 1

    lw = state.topics.block_loglike(block)
    K = state.topics.K
    prior = np.empty(K + 1)
    prior[:K] = state.topics.m
    prior[K] = state.hyper.gamma[0]
    with np.errstate(divide="ignore"):
        lw = lw + np.log(prior)
    state.weight_evals += lw.size
    choice = sample_categorical_log(lw, state.rng)
    k = state.topics.spawn() if choice == K else choice
    state.table_dish[r][t] = k
    state.topics.m[k] += 1
    state.topics.nw[k, uniq] += cnt
    state.topics.nw_sum[k] += int(cnt.sum())
    if k != k_old:
        state._drop_topic_if_empty(k_old)


def save_crf_checkpoint(state, path) -> None:
    """Write a franchise state as deterministic JSON (sorted keys), so a
    fixed state always produces identical bytes."""
    import json

    if not isinstance(state, (HdpCrfState, U2CrfState)):
        raise TypeError(f"unsupported franchise state {type(state).__name__}")
    doc: dict = {
        "format": "nhdp-crf-checkpoint",
        "version": 1,
        "hyper": {
            "L": state.hyper.L,
            "eta": state.hyper.eta,
            "alpha": state.hyper.alpha.tolist(),
            "gamma": state.hyper.gamma.tolist(),
            "alpha_a": state.hyper.alpha_a.tolist(),
            "alpha_b": state.hyper.alpha_b.tolist(),
            "gamma_a": state.hyper.gamma_a.tolist(),
            "gamma_b": state.hyper.gamma_b.tolist(),
            "epsilon_bias": state.hyper.epsilon_bias,
        },
        "V": state.V,
        "words": state.words.tolist(),
        "nw": state.topics.nw.tolist(),
        "m": state.topics.m.tolist(),
        "token_table": state.token_table.tolist(),
        "table_n": [list(t) for t in state.table_n],
        "table_dish": [list(t) for t in state.table_dish],
        "sweep": state.sweep,
        "weight_evals": state.weight_evals,
        "rng": state.rng.get_state(),
    }
    if isinstance(state, HdpCrfState):
        doc["kind"] = "hdp"
        doc["doc_offset"] = state.doc_offset.tolist()
    else:
        doc["kind"] = "u2"
        doc["token_entity"] = state.token_entity.tolist()
        doc["entity_n"] = state.entity_n.tolist()
        doc["entity_update_evals"] = state.entity_update_evals
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_crf_checkpoint(path):
    """Read a franchise checkpoint written by :func:`save_crf_checkpoint`."""
    import json

    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "nhdp-crf-checkpoint":
        raise ValueError(f"{path} is not a franchise checkpoint")
    if doc.get("version") != 1:
        raise ValueError(f"unsupported franchise checkpoint version {doc.get('version')!r}")
    h = doc["hyper"]
    hyper = Hyper(
        L=int(h["L"]),
        eta=float(h["eta"]),
        alpha=np.array(h["alpha"]),
        gamma=np.array(h["gamma"]),
        alpha_a=np.array(h["alpha_a"]),
        alpha_b=np.array(h["alpha_b"]),
        gamma_a=np.array(h["gamma_a"]),
        gamma_b=np.array(h["gamma_b"]),
        epsilon_bias=float(h["epsilon_bias"]),
    )
    kind = doc["kind"]
    cls = HdpCrfState if kind == "hdp" else U2CrfState if kind == "u2" else None
    if cls is None:
        raise ValueError(f"unknown franchise checkpoint kind {kind!r}")
    state = cls.__new__(cls)
    state.hyper = hyper
    state.rng = Rng.from_state(doc["rng"])
    state.V = int(doc["V"])
    state.words = np.asarray(doc["words"], dtype=np.int64)
    state.N_total = int(state.words.size)
    state.topics = _TopicTable(state.V, hyper.eta)
    state.topics.nw = np.asarray(doc["nw"], dtype=np.int64).reshape(-1, state.V)
    state.topics.nw_sum = state.topics.nw.sum(axis=1)
    state.topics.m = np.asarray(doc["m"], dtype=np.int64)
    state.token_table = np.asarray(doc["token_table"], dtype=np.int64)
    state.table_n = [list(map(int, t)) for t in doc["table_n"]]
    state.table_dish = [list(map(int, t)) for t in doc["table_dish"]]
    state.sweep = int(doc["sweep"])
    state.weight_evals = int(doc["weight_evals"])
    if kind == "hdp":
        state.doc_offset = np.asarray(doc["doc_offset"], dtype=np.int64)
        state.M = state.doc_offset.size - 1
    else:
        state.token_entity = np.asarray(doc["token_entity"], dtype=np.int64)
        state.entity_n = np.asarray(doc["entity_n"], dtype=np.int64)
        state.entity_update_evals = int(doc["entity_update_evals"])
    return state


def crf_sweep(state) -> CrfSweepStats:
    """One full franchise sweep: every token's seat, then every table's
    dish, in fixed scan order.  Returns telemetry including the number of
    weight evaluations (the cost model tests pin its scaling)."""
    if not isinstance(state, (HdpCrfState, U2CrfState)):
        raise TypeError(f"unsupported franchise state {type(state).__name__}")
    t0 = time.perf_counter()
    evals_before = state.weight_evals
    if isinstance(state, HdpCrfState):
        for j in range(state.M):
            for i in range(state.doc_len(j)):
                hdp_sample_table(state, j, i)
        for j in range(state.M):
            for t in range(len(state.table_n[j])):
                hdp_sample_dish(state, j, t)
        K = [state.K]
        entity_evals = 0
    else:
        entity_before = state.entity_update_evals
        for i in range(state.N_total):
            u2_sample_entity(state, i)
        for r in range(state.K_entities):
            for t in range(len(state.table_n[r])):
                u2_sample_dish(state, r, t)
        K = [state.K_topics, state.K_entities]
        entity_evals = state.entity_update_evals - entity_before
    state.sweep += 1
    return CrfSweepStats(
        sweep=state.sweep,
        K=K,
        tables=state.total_tables(),
        seconds=time.perf_counter() - t0,
        weight_evals=state.weight_evals - evals_before,
        log_word=_word_loglike(state.topics.nw, state.topics.nw_sum, state.hyper.eta, state.V),
        entity_evals=entity_evals,
    )
