"""Mutable sampler state for the nested admixture model.

Levels are numbered 0..L.  Level-0 dishes are topics (rows of the
topic-word count table), level-L restaurants are the documents, and for
1 <= l <= L each level-l dish doubles as a restaurant at level l-1.
Dish labels are dense integers per level; pruning swaps the last label
into the freed slot so the label space never fragments.

Counts kept per level l:

* ``n[l][r, k]``  customers (tokens) with restaurant r and dish k,
* ``m[l][r, k]``  tables backing those customers (refreshed once per
  sweep, clamped to [1, n] in between),
* ``beta[l]``, ``beta_new[l]``  stick weights over dishes plus the
  unbroken remainder; they sum to one at all times.

In regimes ``complete`` and ``partial`` the level-L dishes seeded from
author labels are permanent: they are never pruned even at zero count,
because the model treats observed entities as always available.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .corpus import AuthorLabels, Corpus
from .randdist import Rng

__all__ = [
    "Hyper",
    "ModelState",
    "PosteriorSample",
    "InvariantError",
    "CheckpointError",
    "NEW_DISH",
    "new_state",
    "add_token",
    "remove_token",
    "prune_empty",
    "validate",
    "save_checkpoint",
    "load_checkpoint",
]

STATE_VERSION = 1
CHECKPOINT_MAGIC = b"NHDPCKPT"

# Sentinel dish label meaning "open a fresh dish here" in assignment paths.
NEW_DISH = -1

# Normalization slack tolerated on stick weights before validate complains.
STICK_TOL = 1e-10


class InvariantError(RuntimeError):
    """Internal bookkeeping violated an invariant; state is suspect."""


class CheckpointError(ValueError):
    """Unreadable, truncated, corrupt or incompatible checkpoint file."""


def _per_level(value, L: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(L + 1, float(arr))
    if arr.shape != (L + 1,):
        raise ValueError(f"{name} must be scalar or length L+1={L + 1}, got shape {arr.shape}")
    if not np.all(arr > 0):
        raise ValueError(f"{name} entries must be positive")
    return arr


@dataclass
class Hyper:
    """Model hyperparameters; concentrations are per level 0..L.

    ``alpha[l]`` governs the restaurant-level processes at level l and
    ``gamma[l]`` the shared dish popularity.  Both carry Gamma(a, b)
    hyperpriors (rate parameterization) used when concentrations are
    resampled.  ``eta`` is the symmetric topic-word smoothing and
    ``epsilon_bias`` the additive mass given to known entities in the
    partial regime.
    """

    L: int = 1
    eta: float = 0.1
    alpha: np.ndarray | float = 1.0
    gamma: np.ndarray | float = 1.0
    alpha_a: np.ndarray | float = 1.0
    alpha_b: np.ndarray | float = 1.0
    gamma_a: np.ndarray | float = 1.0
    gamma_b: np.ndarray | float = 1.0
    epsilon_bias: float = 0.1

    def __post_init__(self):
        self.L = int(self.L)
        if self.L < 0:
            raise ValueError(f"L must be nonnegative, got {self.L}")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.epsilon_bias < 0:
            raise ValueError("epsilon_bias must be nonnegative")
        for name in ("alpha", "gamma", "alpha_a", "alpha_b", "gamma_a", "gamma_b"):
            setattr(self, name, _per_level(getattr(self, name), self.L, name))

    def copy(self) -> "Hyper":
        return Hyper(
            self.L,
            self.eta,
            self.alpha.copy(),
            self.gamma.copy(),
            self.alpha_a.copy(),
            self.alpha_b.copy(),
            self.gamma_a.copy(),
            self.gamma_b.copy(),
            self.epsilon_bias,
        )


@dataclass
class PosteriorSample:
    """Frozen snapshot of a state, sufficient for evaluation.

    Carries copies, so later sweeps cannot mutate it.
    """

    hyper: Hyper
    K: list
    n: list
    beta: list
    beta_new: np.ndarray
    nw: np.ndarray
    nw_sum: np.ndarray
    dish_author: list
    regime: str
    M: int
    V: int
    sweep: int


class ModelState:
    """Assignments, counts, sticks and the RNG driving one chain."""

    def __init__(self, corpus: Corpus, labels: AuthorLabels, hyper: Hyper, rng: Rng):
        if len(labels.known) != corpus.M:
            raise ValueError("labels cover a different number of documents than the corpus")
        self.version = STATE_VERSION
        self.hyper = hyper.copy()
        self.regime = labels.regime
        self.known = list(labels.known)
        self.author_names = list(labels.author_names)
        self.V = corpus.V
        self.M = corpus.M
        self.rng = rng
        self.sweep = 0

        lengths = corpus.N
        self.doc_offset = np.zeros(corpus.M + 1, dtype=np.int64)
        np.cumsum(lengths, out=self.doc_offset[1:])
        self.N_total = int(self.doc_offset[-1])
        self.words = (
            np.concatenate(corpus.docs) if self.N_total else np.empty(0, dtype=np.int64)
        ).astype(np.int64)
        self.doc_of = np.repeat(np.arange(corpus.M, dtype=np.int64), lengths)

        L = hyper.L
        self.z = [np.full(self.N_total, NEW_DISH, dtype=np.int64) for _ in range(L + 1)]
        self.n = [np.zeros((self._n_restaurants_for_K(l, 0), 0), dtype=np.int64) for l in range(L + 1)]
        self.m = [np.zeros_like(self.n[l]) for l in range(L + 1)]
        self.nsum = [np.zeros(self.n[l].shape[0], dtype=np.int64) for l in range(L + 1)]
        self.beta = [np.zeros(0) for _ in range(L + 1)]
        self.beta_new = np.ones(L + 1)
        self.nw = np.zeros((0, self.V), dtype=np.int64)
        self.nw_sum = np.zeros(0, dtype=np.int64)
        self.dish_author: list = []
        self.author_dish: dict = {}

    # -- shape helpers ---------------------------------------------------

    @property
    def L(self) -> int:
        return self.hyper.L

    def K(self, l: int) -> int:
        return self.beta[l].size

    def _n_restaurants_for_K(self, l: int, K_above: int) -> int:
        return self.M if l == self.hyper.L else K_above

    def n_restaurants(self, l: int) -> int:
        return self.M if l == self.L else self.K(l + 1)

    def token_index(self, j: int, i: int) -> int:
        if not 0 <= j < self.M:
            raise IndexError(f"document index {j} outside 0..{self.M - 1}")
        if not 0 <= i < self.doc_offset[j + 1] - self.doc_offset[j]:
            raise IndexError(f"token index {i} outside document {j}")
        return int(self.doc_offset[j] + i)

    def doc_len(self, j: int) -> int:
        return int(self.doc_offset[j + 1] - self.doc_offset[j])

    def is_protected(self, l: int, k: int) -> bool:
        """Author-seeded level-L dishes survive at zero count."""
        return (
            l == self.L
            and self.regime in ("complete", "partial")
            and self.dish_author[k] is not None
        )

    # -- dish lifecycle --------------------------------------------------

    def spawn_dish(self, l: int, author: int | None = None) -> int:
        """Append a dish at level l, carving its stick weight from the
        remainder with a Beta(1, gamma[l]) split.  Returns the new label."""
        k = self.K(l)
        b = self.rng.beta(1.0, self.hyper.gamma[l])
        carved = self.beta_new[l] * b
        # Keep the remainder strictly positive.
        carved = min(carved, self.beta_new[l] * (1.0 - 1e-12))
        self.beta[l] = np.append(self.beta[l], carved)
        self.beta_new[l] -= carved
        self.n[l] = np.hstack([self.n[l], np.zeros((self.n[l].shape[0], 1), dtype=np.int64)])
        self.m[l] = np.hstack([self.m[l], np.zeros((self.m[l].shape[0], 1), dtype=np.int64)])
        if l >= 1:
            width = self.K(l - 1)
            self.n[l - 1] = np.vstack([self.n[l - 1], np.zeros((1, width), dtype=np.int64)])
            self.m[l - 1] = np.vstack([self.m[l - 1], np.zeros((1, width), dtype=np.int64)])
            self.nsum[l - 1] = np.append(self.nsum[l - 1], 0)
        if l == 0:
            self.nw = np.vstack([self.nw, np.zeros((1, self.V), dtype=np.int64)])
            self.nw_sum = np.append(self.nw_sum, 0)
        if l == self.L:
            self.dish_author.append(author)
            if author is not None:
                self.author_dish[author] = k
        return k

    def prune_dish(self, l: int, k: int) -> None:
        """Remove dish k at level l (total count must be zero), swapping the
        last label into slot k and folding its stick weight into the
        remainder."""
        last = self.K(l) - 1
        if self.n[l][:, k].sum() != 0:
            raise InvariantError(f"pruning level-{l} dish {k} with nonzero count")
        self.beta_new[l] += self.beta[l][k]
        if l == self.L:
            gone = self.dish_author[k]
            if gone is not None:
                self.author_dish.pop(gone, None)
        if k != last:
            self.beta[l][k] = self.beta[l][last]
            self.n[l][:, k] = self.n[l][:, last]
            self.m[l][:, k] = self.m[l][:, last]
            if l >= 1:
                self.n[l - 1][k, :] = self.n[l - 1][last, :]
                self.m[l - 1][k, :] = self.m[l - 1][last, :]
                self.nsum[l - 1][k] = self.nsum[l - 1][last]
            if l == 0:
                self.nw[k] = self.nw[last]
                self.nw_sum[k] = self.nw_sum[last]
            if l == self.L:
                moved = self.dish_author[last]
                self.dish_author[k] = moved
                if moved is not None:
                    self.author_dish[moved] = k
            # No token holds label k (count is zero), so relabeling is a
            # single masked write.
            zl = self.z[l]
            zl[zl == last] = k
        self.beta[l] = self.beta[l][:last].copy()
        self.n[l] = self.n[l][:, :last].copy()
        self.m[l] = self.m[l][:, :last].copy()
        if l >= 1:
            self.n[l - 1] = self.n[l - 1][:last, :].copy()
            self.m[l - 1] = self.m[l - 1][:last, :].copy()
            self.nsum[l - 1] = self.nsum[l - 1][:last].copy()
        if l == 0:
            self.nw = self.nw[:last].copy()
            self.nw_sum = self.nw_sum[:last].copy()
        if l == self.L:
            self.dish_author.pop()

    # -- snapshots ---------------------------------------------------------

    def snapshot(self) -> PosteriorSample:
        return PosteriorSample(
            hyper=self.hyper.copy(),
            K=[self.K(l) for l in range(self.L + 1)],
            n=[a.copy() for a in self.n],
            beta=[b.copy() for b in self.beta],
            beta_new=self.beta_new.copy(),
            nw=self.nw.copy(),
            nw_sum=self.nw_sum.copy(),
            dish_author=list(self.dish_author),
            regime=self.regime,
            M=self.M,
            V=self.V,
            sweep=self.sweep,
        )


def add_token(state: ModelState, j: int, i: int, path) -> list:
    """Seat token (j, i) along ``path`` (level-0 dish first is NOT the
    convention: path[l] holds the level-l dish).  Entries equal to
    NEW_DISH spawn fresh dishes top-down.  Returns the resolved path."""
    t = state.token_index(j, i)
    if state.z[state.L][t] != NEW_DISH:
        raise InvariantError(f"token ({j}, {i}) is already assigned")
    path = list(path)
    if len(path) != state.L + 1:
        raise ValueError(f"path must have {state.L + 1} entries")
    for l in range(state.L, -1, -1):
        if path[l] == NEW_DISH:
            path[l] = state.spawn_dish(l)
        elif not 0 <= path[l] < state.K(l):
            raise ValueError(f"path level {l} names inactive dish {path[l]}")
    w = int(state.words[t])
    for l in range(state.L, -1, -1):
        r = j if l == state.L else path[l + 1]
        k = path[l]
        state.n[l][r, k] += 1
        state.nsum[l][r] += 1
        if state.m[l][r, k] == 0:
            state.m[l][r, k] = 1
        state.z[l][t] = k
    state.nw[path[0], w] += 1
    state.nw_sum[path[0]] += 1
    return path


def remove_token(state: ModelState, j: int, i: int, prune: bool = True) -> list:
    """Unseat token (j, i), decrementing every level's counts.

    With ``prune`` (the default) dishes whose total count reaches zero are
    removed and labels compacted.  The sampler defers pruning until after
    the token is re-seated so the old path stays conditionable.
    Returns the path the token held.
    """
    t = state.token_index(j, i)
    path = [int(state.z[l][t]) for l in range(state.L + 1)]
    if any(k == NEW_DISH for k in path):
        raise InvariantError(f"token ({j}, {i}) is not assigned")
    w = int(state.words[t])
    for l in range(state.L, -1, -1):
        r = j if l == state.L else path[l + 1]
        k = path[l]
        if state.n[l][r, k] <= 0:
            raise InvariantError(f"level-{l} count underflow at restaurant {r}, dish {k}")
        state.n[l][r, k] -= 1
        state.nsum[l][r] -= 1
        if state.n[l][r, k] == 0:
            state.m[l][r, k] = 0
        elif state.m[l][r, k] > state.n[l][r, k]:
            state.m[l][r, k] = state.n[l][r, k]
        state.z[l][t] = NEW_DISH
    if state.nw[path[0], w] <= 0:
        raise InvariantError("topic-word count underflow")
    state.nw[path[0], w] -= 1
    state.nw_sum[path[0]] -= 1
    if prune:
        prune_empty(state)
    return path


def prune_empty(state: ModelState) -> int:
    """Prune every unprotected dish with zero total count; returns how many."""
    pruned = 0
    for l in range(state.L, -1, -1):
        k = 0
        while k < state.K(l):
            if state.n[l][:, k].sum() == 0 and not state.is_protected(l, k):
                state.prune_dish(l, k)
                pruned += 1
            else:
                k += 1
    return pruned


def validate(state: ModelState) -> str | None:
    """Recompute all derived structure; returns None or the first violation."""
    L, M, V = state.L, state.M, state.V
    for l in range(L + 1):
        K = state.K(l)
        R = state.n_restaurants(l)
        if state.n[l].shape != (R, K):
            return f"n[{l}] has shape {state.n[l].shape}, expected {(R, K)}"
        if state.m[l].shape != (R, K):
            return f"m[{l}] has shape {state.m[l].shape}, expected {(R, K)}"
        if state.nsum[l].shape != (R,):
            return f"nsum[{l}] has shape {state.nsum[l].shape}, expected {(R,)}"
    if state.nw.shape != (state.K(0), V):
        return f"nw has shape {state.nw.shape}, expected {(state.K(0), V)}"
    if len(state.dish_author) != state.K(L):
        return f"dish_author has {len(state.dish_author)} entries for {state.K(L)} dishes"

    assigned = state.z[0] != NEW_DISH if state.N_total else np.zeros(0, dtype=bool)
    for l in range(L + 1):
        zl = state.z[l]
        if state.N_total and np.any((zl != NEW_DISH) != assigned):
            return f"level {l} assignment mask disagrees with level 0"
        valid = zl[assigned]
        if valid.size and (valid.min() < 0 or valid.max() >= state.K(l)):
            return f"level {l} has out-of-range dish labels"

    for l in range(L + 1):
        expect = np.zeros_like(state.n[l])
        idx = np.flatnonzero(assigned)
        for t in idx:
            r = int(state.doc_of[t]) if l == L else int(state.z[l + 1][t])
            expect[r, int(state.z[l][t])] += 1
        if not np.array_equal(expect, state.n[l]):
            return f"n[{l}] disagrees with assignments"
        if not np.array_equal(expect.sum(axis=1), state.nsum[l]):
            return f"nsum[{l}] disagrees with n[{l}]"
        bad_m = (state.m[l] > state.n[l]) | ((state.m[l] == 0) != (state.n[l] == 0))
        if np.any(bad_m):
            return f"m[{l}] outside [1, n] / zero-pairing at level {l}"
        col = state.n[l].sum(axis=0)
        for k in range(state.K(l)):
            if col[k] == 0 and not state.is_protected(l, k):
                return f"level {l} dish {k} is empty but not pruned"

    expect_nw = np.zeros_like(state.nw)
    for t in np.flatnonzero(assigned):
        expect_nw[int(state.z[0][t]), int(state.words[t])] += 1
    if not np.array_equal(expect_nw, state.nw):
        return "nw disagrees with assignments"
    if not np.array_equal(expect_nw.sum(axis=1), state.nw_sum):
        return "nw_sum disagrees with nw"

    for l in range(L + 1):
        if state.beta[l].size and state.beta[l].min() <= 0:
            return f"beta[{l}] has a nonpositive entry"
        if state.beta_new[l] <= 0:
            return f"beta_new[{l}] is not strictly positive"
        total = state.beta[l].sum() + state.beta_new[l]
        if abs(total - 1.0) > STICK_TOL:
            return f"stick weights at level {l} sum to {total!r}"

    for author, dish in state.author_dish.items():
        if not (0 <= dish < state.K(L)) or state.dish_author[dish] != author:
            return f"author_dish map is stale for author {author}"
    return None


# -- checkpoints -----------------------------------------------------------


def _header_dict(state: ModelState) -> dict:
    return {
        "state_version": state.version,
        "L": state.L,
        "M": state.M,
        "V": state.V,
        "N_total": state.N_total,
        "doc_lengths": [state.doc_len(j) for j in range(state.M)],
        "K": [state.K(l) for l in range(state.L + 1)],
        "R": [state.n_restaurants(l) for l in range(state.L + 1)],
        "eta": state.hyper.eta,
        "alpha": state.hyper.alpha.tolist(),
        "gamma": state.hyper.gamma.tolist(),
        "alpha_a": state.hyper.alpha_a.tolist(),
        "alpha_b": state.hyper.alpha_b.tolist(),
        "gamma_a": state.hyper.gamma_a.tolist(),
        "gamma_b": state.hyper.gamma_b.tolist(),
        "epsilon_bias": state.hyper.epsilon_bias,
        "regime": state.regime,
        "known": [sorted(s) for s in state.known],
        "author_names": state.author_names,
        "dish_author": [a if a is not None else None for a in state.dish_author],
        "sweep": state.sweep,
        "rng": state.rng.get_state(),
    }


def save_checkpoint(state: ModelState, path: str) -> None:
    """Write a versioned binary checkpoint.

    Layout: 8-byte magic, little-endian uint32 format version, uint64
    header length, UTF-8 JSON header, then raw little-endian arrays in
    fixed order (words, doc_of, z per level, then per level n, m, beta,
    then beta_new, nw), and a trailing SHA-256 of everything before it.
    """
    header = json.dumps(_header_dict(state)).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", 1), struct.pack("<Q", len(header)), header]
    for l in range(state.L + 1):
        parts.append(state.z[l].astype("<i8").tobytes())
    parts.append(state.words.astype("<i8").tobytes())
    parts.append(state.doc_of.astype("<i8").tobytes())
    for l in range(state.L + 1):
        parts.append(state.n[l].astype("<i8").tobytes())
        parts.append(state.m[l].astype("<i8").tobytes())
        parts.append(state.beta[l].astype("<f8").tobytes())
    parts.append(state.beta_new.astype("<f8").tobytes())
    parts.append(state.nw.astype("<i8").tobytes())
    blob = b"".join(parts)
    digest = hashlib.sha256(blob).digest()
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(digest)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos : self.pos + count]
        self.pos += count
        return out

    def array(self, dtype: str, shape) -> np.ndarray:
        count = int(np.prod(shape)) if len(shape) else 1
        raw = self.take(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def load_checkpoint(path: str) -> ModelState:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(CHECKPOINT_MAGIC) + 4 + 8 + 32:
        raise CheckpointError("checkpoint is truncated")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch; file is corrupt")
    rd = _Reader(body)
    if rd.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", rd.take(4))
    if version != 1:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    (hlen,) = struct.unpack("<Q", rd.take(8))
    header = json.loads(rd.take(hlen).decode("utf-8"))

    L = int(header["L"])
    M = int(header["M"])
    V = int(header["V"])
    N = int(header["N_total"])
    K = [int(k) for k in header["K"]]
    R = [int(r) for r in header["R"]]

    hyper = Hyper(
        L=L,
        eta=float(header["eta"]),
        alpha=np.array(header["alpha"]),
        gamma=np.array(header["gamma"]),
        alpha_a=np.array(header["alpha_a"]),
        alpha_b=np.array(header["alpha_b"]),
        gamma_a=np.array(header["gamma_a"]),
        gamma_b=np.array(header["gamma_b"]),
        epsilon_bias=float(header["epsilon_bias"]),
    )
    z = [rd.array("<i8", (N,)) for _ in range(L + 1)]
    words = rd.array("<i8", (N,))
    doc_of = rd.array("<i8", (N,))
    n, m, beta = [], [], []
    for l in range(L + 1):
        n.append(rd.array("<i8", (R[l], K[l])))
        m.append(rd.array("<i8", (R[l], K[l])))
        beta.append(rd.array("<f8", (K[l],)))
    beta_new = rd.array("<f8", (L + 1,))
    nw = rd.array("<i8", (K[0], V))
    if rd.pos != len(body):
        raise CheckpointError("trailing bytes after the declared layout")

    lengths = [int(x) for x in header["doc_lengths"]]
    docs = []
    start = 0
    for ln in lengths:
        docs.append(words[start : start + ln])
        start += ln
    corpus = Corpus(docs, [f"w{v}" for v in range(V)])
    labels = AuthorLabels(
        [frozenset(s) for s in header["known"]],
        header["regime"],
        set(),
        list(header["author_names"]),
    )
    state = ModelState(corpus, labels, hyper, Rng.from_state(header["rng"]))
    state.z = z
    state.words = words
    state.doc_of = doc_of
    state.n = n
    state.m = m
    state.nsum = [arr.sum(axis=1) for arr in n]
    state.beta = beta
    state.beta_new = beta_new
    state.nw = nw
    state.nw_sum = nw.sum(axis=1)
    state.dish_author = [a if a is None else int(a) for a in header["dish_author"]]
    state.author_dish = {
        a: k for k, a in enumerate(state.dish_author) if a is not None
    }
    state.sweep = int(header["sweep"])
    return state


def new_state(
    corpus: Corpus, labels: AuthorLabels | None, hyper: Hyper, rng: Rng
) -> ModelState:
    """Initialize a state with one online pass over the tokens.

    Each token's full path is drawn from the current Gibbs conditionals
    given everything seated so far.  In regimes complete and partial the
    level-L dish list is seeded with one dish per distinct known author
    before the pass, and labeled documents restrict their tokens to their
    own authors during this pass (no new entities for them yet).
    """
    if labels is None:
        labels = AuthorLabels.none_for(corpus)
    if labels.regime == "complete":
        for j, aset in enumerate(labels.known):
            if not aset:
                raise ValueError(f"regime 'complete' requires authors for every document; document {j} has none")
    state = ModelState(corpus, labels, hyper, rng)
    if labels.regime in ("complete", "partial"):
        for author in sorted(set().union(*labels.known)) if labels.known else []:
            state.spawn_dish(state.L, author=author)

    from .gibbs_direct import draw_path, resample_sticks, resample_table_counts

    for j in range(state.M):
        for i in range(state.doc_len(j)):
            path = draw_path(state, j, i, init=True)
            add_token(state, j, i, path)
    prune_empty(state)
    for l in range(state.L + 1):
        resample_table_counts(state, l)
        resample_sticks(state, l)
    return state
