"""Corpora, author labels, file loaders and label-hiding utilities.

Two on-disk formats are supported:

* sparse bag-of-words: three integer header lines (documents, vocabulary
  size, number of nonzero cells) followed by ``docID wordID count``
  triples, all ids 1-based on disk;
* JSON lines: one object per document with a required ``tokens`` array
  and optional ``id`` and ``authors`` fields.

In memory everything is dense and 0-based.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .randdist import Rng

__all__ = [
    "ParseError",
    "Corpus",
    "AuthorLabels",
    "load_bow_corpus",
    "load_jsonl_corpus",
    "save_jsonl_corpus",
    "author_vote_split",
    "mask_authors",
]

REGIMES = ("none", "partial", "complete")

# Fixed substream ids so seeded splits and masks replay exactly.
VOTE_SPLIT_STREAM = 101
MASK_STREAM = 102


class ParseError(ValueError):
    """Malformed corpus file; carries the offending 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass
class Corpus:
    """Token-id documents over a shared vocabulary.

    docs[j] is an int array of token ids in document order.  Empty
    documents are legal and kept.
    """

    docs: list
    vocab: list

    def __post_init__(self):
        self.docs = [np.asarray(d, dtype=np.int64) for d in self.docs]
        for j, d in enumerate(self.docs):
            if d.size and (d.min() < 0 or d.max() >= len(self.vocab)):
                raise ValueError(f"document {j} has token ids outside [0, {len(self.vocab)})")

    @property
    def M(self) -> int:
        return len(self.docs)

    @property
    def V(self) -> int:
        return len(self.vocab)

    @property
    def N(self) -> np.ndarray:
        """Per-document token counts."""
        return np.array([len(d) for d in self.docs], dtype=np.int64)

    @property
    def total_tokens(self) -> int:
        return int(self.N.sum())

    def subset(self, doc_indices) -> "Corpus":
        return Corpus([self.docs[j] for j in doc_indices], self.vocab)


@dataclass
class AuthorLabels:
    """Known entity sets per document plus the global hidden set.

    regime is one of:
      none      no labels are used;
      complete  every document's full entity set is known;
      partial   labels are hints, new entities may appear.
    """

    known: list
    regime: str
    global_hidden: set = field(default_factory=set)
    author_names: list = field(default_factory=list)

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        self.known = [frozenset(int(a) for a in s) for s in self.known]
        self.global_hidden = set(int(a) for a in self.global_hidden)

    @property
    def n_authors(self) -> int:
        if self.author_names:
            return len(self.author_names)
        universe = set().union(*self.known) if self.known else set()
        universe |= self.global_hidden
        return (max(universe) + 1) if universe else 0

    def subset(self, doc_indices) -> "AuthorLabels":
        return AuthorLabels(
            [self.known[j] for j in doc_indices],
            self.regime,
            set(self.global_hidden),
            list(self.author_names),
        )

    @staticmethod
    def none_for(corpus: Corpus) -> "AuthorLabels":
        return AuthorLabels([frozenset()] * corpus.M, "none")


def _parse_int(text: str, what: str, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"expected integer {what}, got {text!r}", line) from None


def load_bow_corpus(path: str, vocab_path: str) -> Corpus:
    """Load a sparse bag-of-words file plus its one-term-per-line vocabulary.

    Counts are expanded to token sequences ordered by ascending word id
    within each document.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 3:
        raise ParseError("missing header (documents, vocabulary size, cells)", len(lines) + 1)
    D = _parse_int(lines[0].strip(), "document count", 1)
    W = _parse_int(lines[1].strip(), "vocabulary size", 2)
    NNZ = _parse_int(lines[2].strip(), "cell count", 3)
    if D < 0 or W < 0 or NNZ < 0:
        raise ParseError("header values must be nonnegative", 1)

    with open(vocab_path, "r", encoding="utf-8") as fh:
        vocab = [ln.rstrip("\n") for ln in fh if ln.strip() != ""]
    if len(vocab) < W:
        raise ParseError(f"vocabulary file has {len(vocab)} terms but header declares {W}", 1)
    vocab = vocab[:W]

    cells: list[list[tuple[int, int]]] = [[] for _ in range(D)]
    body = lines[3:]
    if len(body) < NNZ:
        raise ParseError(f"expected {NNZ} cells but file has {len(body)}", len(lines) + 1)
    for idx in range(NNZ):
        lineno = 4 + idx
        parts = body[idx].split()
        if len(parts) != 3:
            raise ParseError(f"expected 'docID wordID count', got {body[idx]!r}", lineno)
        d = _parse_int(parts[0], "doc id", lineno)
        w = _parse_int(parts[1], "word id", lineno)
        c = _parse_int(parts[2], "count", lineno)
        if not 1 <= d <= D:
            raise ParseError(f"doc id {d} outside 1..{D}", lineno)
        if not 1 <= w <= W:
            raise ParseError(f"word id {w} outside 1..{W}", lineno)
        if c < 1:
            raise ParseError(f"count must be >= 1, got {c}", lineno)
        cells[d - 1].append((w - 1, c))

    docs = []
    for entries in cells:
        entries.sort()
        if entries:
            docs.append(np.repeat([w for w, _ in entries], [c for _, c in entries]))
        else:
            docs.append(np.empty(0, dtype=np.int64))
    return Corpus(docs, vocab)


def load_jsonl_corpus(path: str, vocab: list | None = None):
    """Load a JSON-lines corpus; returns (Corpus, AuthorLabels).

    Vocabulary and author ids are assigned densely in order of first
    appearance.  Pass the training corpus's ``vocab`` to keep token ids
    aligned across files; tokens outside it get fresh ids at the end (so
    held-out scoring can recognize them as out-of-vocabulary).  Duplicate
    document ids and records without a ``tokens`` array are parse errors
    naming the line.
    """
    vocab = list(vocab) if vocab is not None else []
    vocab_index: dict[str, int] = {tok: i for i, tok in enumerate(vocab)}
    authors: list[str] = []
    author_index: dict[str, int] = {}
    docs = []
    known = []
    seen_ids = set()
    any_authors = False
    all_authored = True

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(record, dict) or "tokens" not in record:
                raise ParseError("record is missing required 'tokens' array", lineno)
            tokens = record["tokens"]
            if not isinstance(tokens, list):
                raise ParseError("'tokens' must be an array", lineno)
            if "id" in record:
                doc_id = record["id"]
                if doc_id in seen_ids:
                    raise ParseError(f"duplicate document id {doc_id!r}", lineno)
                seen_ids.add(doc_id)
            ids = []
            for tok in tokens:
                tok = str(tok)
                if tok not in vocab_index:
                    vocab_index[tok] = len(vocab)
                    vocab.append(tok)
                ids.append(vocab_index[tok])
            docs.append(np.asarray(ids, dtype=np.int64))

            record_authors = record.get("authors")
            if record_authors:
                any_authors = True
                aset = set()
                for name in record_authors:
                    name = str(name)
                    if name not in author_index:
                        author_index[name] = len(authors)
                        authors.append(name)
                    aset.add(author_index[name])
                known.append(frozenset(aset))
            else:
                all_authored = False
                known.append(frozenset())

    corpus = Corpus(docs, vocab)
    if not any_authors:
        regime = "none"
    elif all_authored:
        regime = "complete"
    else:
        regime = "partial"
    labels = AuthorLabels(known, regime, set(), authors)
    return corpus, labels


def save_jsonl_corpus(corpus: Corpus, labels: AuthorLabels | None, path: str) -> None:
    """Write a corpus (and author sets, if labeled) as JSON lines; the
    exact inverse of load_jsonl_corpus up to token/author id assignment."""
    with open(path, "w", encoding="utf-8") as fh:
        for j, doc in enumerate(corpus.docs):
            record: dict = {
                "id": f"d{j}",
                "tokens": [corpus.vocab[w] for w in doc],
            }
            if labels is not None and labels.regime != "none" and labels.known[j]:
                names = labels.author_names
                record["authors"] = [
                    names[a] if a < len(names) else str(a) for a in sorted(labels.known[j])
                ]
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")


def author_vote_split(corpus: Corpus, labels: AuthorLabels, p_train: float, seed: int):
    """Split documents into train/test by per-author votes.

    Every author of a document casts one independent vote: train with
    probability p_train, test otherwise.  Strict majority decides; ties go
    to train.  Votes are drawn per document (ascending), per author id
    (ascending), one uniform each, on stream VOTE_SPLIT_STREAM of `seed`.
    Returns (train_indices, test_indices).
    """
    if not 0.0 <= p_train <= 1.0:
        raise ValueError(f"p_train must lie in [0, 1], got {p_train}")
    if len(labels.known) != corpus.M:
        raise ValueError("labels cover a different number of documents than the corpus")
    rng = Rng(seed, VOTE_SPLIT_STREAM)
    train, test = [], []
    for j in range(corpus.M):
        voters = sorted(labels.known[j])
        if not voters:
            raise ValueError(f"document {j} has no authors to vote")
        yes = sum(1 for _ in voters if rng.uniform() < p_train)
        if 2 * yes >= len(voters):
            train.append(j)
        else:
            test.append(j)
    return train, test


def mask_authors(labels: AuthorLabels, p_global: float, p_local: float, seed: int) -> AuthorLabels:
    """Hide authors to build partially observed label sets.

    Pass 1 walks the global author ids in ascending order and hides each
    everywhere with probability p_global (recorded in global_hidden).
    Pass 2 walks documents in ascending order and removes each surviving
    author (ascending ids) from that document with probability p_local.
    Uniforms are drawn in exactly that order on stream MASK_STREAM.

    The result's regime is complete when p_global == p_local == 0, none
    when every per-document set came out empty, and partial otherwise.
    """
    for name, p in (("p_global", p_global), ("p_local", p_local)):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {p}")
    if labels.regime not in ("complete", "partial"):
        raise ValueError("masking requires labels in regime 'complete' or 'partial'")

    rng = Rng(seed, MASK_STREAM)
    universe = sorted(set().union(*labels.known)) if labels.known else []
    hidden = set(labels.global_hidden)
    for author in universe:
        if rng.uniform() < p_global:
            hidden.add(author)

    masked = []
    for aset in labels.known:
        kept = set()
        for author in sorted(aset):
            if author in hidden:
                continue
            if rng.uniform() < p_local:
                continue
            kept.add(author)
        masked.append(frozenset(kept))

    if p_global == 0.0 and p_local == 0.0:
        regime = "complete"
    elif all(not s for s in masked):
        regime = "none"
    else:
        regime = "partial"
    return AuthorLabels(masked, regime, hidden, list(labels.author_names))
