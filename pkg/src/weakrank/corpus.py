"""Documents, queries and vocabulary.

Tokenization is deliberately simple: lowercase, split on anything that is
not a letter or digit, no stemming. Stopword removal is opt-in.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

# id returned for terms that never occur in the corpus; every representation skips it
OOV = -1

URL_MARKERS = ("http", "www.", ".com", ".net", ".org", ".edu")

_SPLIT = re.compile(r"[^0-9a-z]+")


def tokenize(text: str, stopwords: frozenset[str] | set[str] | None = None) -> list[str]:
    """Lowercase ``text`` and split it on runs of non-alphanumeric characters."""
    tokens = [t for t in _SPLIT.split(text.lower()) if t]
    if stopwords:
        tokens = [t for t in tokens if t not in stopwords]
    return tokens


def load_stopwords(path: str | Path) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip().lower() for line in fh if line.strip())


@dataclass(frozen=True)
class Document:
    doc_id: str
    tokens: np.ndarray  # term ids, original order

    @property
    def length(self) -> int:
        return int(self.tokens.size)


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str
    tokens: np.ndarray  # in-vocabulary term ids, original order


class Vocabulary:
    """Bijection between terms and dense integer ids, with collection statistics."""

    def __init__(self, terms: Sequence[str], collection_tf=None, df=None):
        self.terms = list(terms)
        self._ids = {t: i for i, t in enumerate(self.terms)}
        if len(self._ids) != len(self.terms):
            raise ValueError("duplicate terms in vocabulary")
        n = len(self.terms)
        self.collection_tf = np.zeros(n, np.int64) if collection_tf is None else np.asarray(collection_tf, np.int64)
        self.df = np.zeros(n, np.int64) if df is None else np.asarray(df, np.int64)

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def size(self) -> int:
        return len(self.terms)

    def id_of(self, term: str) -> int:
        return self._ids.get(term, OOV)

    def term_of(self, i: int) -> str:
        return self.terms[i]

    def encode(self, tokens: Iterable[str], keep_oov: bool = False) -> np.ndarray:
        ids = [self._ids.get(t, OOV) for t in tokens]
        if not keep_oov:
            ids = [i for i in ids if i != OOV]
        return np.asarray(ids, dtype=np.int64)


@dataclass
class Corpus:
    documents: list[Document]
    vocab: Vocabulary
    stopwords: frozenset[str] = field(default_factory=frozenset)

    def __len__(self) -> int:
        return len(self.documents)

    def make_query(self, query_id: str, text: str) -> Query:
        return Query(query_id, text, self.vocab.encode(tokenize(text, self.stopwords)))


def build_corpus(records: Iterable[tuple[str, str]], stopwords=None) -> Corpus:
    """Tokenize ``(doc_id, text)`` records and build the vocabulary.

    Term ids are assigned in order of first appearance, which keeps the
    mapping deterministic for a fixed input file.
    """
    stopwords = frozenset(stopwords or ())
    ids: dict[str, int] = {}
    terms: list[str] = []
    raw_docs = []
    seen = set()
    for doc_id, text in records:
        if doc_id in seen:
            raise ValueError(f"duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        toks = tokenize(text, stopwords)
        enc = []
        for t in toks:
            i = ids.get(t)
            if i is None:
                i = ids[t] = len(terms)
                terms.append(t)
            enc.append(i)
        raw_docs.append((doc_id, np.asarray(enc, dtype=np.int64)))

    n = len(terms)
    ctf = np.zeros(n, np.int64)
    df = np.zeros(n, np.int64)
    for _, enc in raw_docs:
        if enc.size:
            np.add.at(ctf, enc, 1)
            df[np.unique(enc)] += 1
    vocab = Vocabulary(terms, ctf, df)
    docs = [Document(doc_id, enc) for doc_id, enc in raw_docs]
    return Corpus(docs, vocab, stopwords)


def read_tsv(path: str | Path) -> list[tuple[str, str]]:
    """Read ``id TAB text`` lines. Blank lines and ``#`` comments are skipped."""
    out = []
    with open(path, encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'id<TAB>text'")
            key, text = line.split("\t", 1)
            out.append((key, text))
    return out


def load_corpus(path: str | Path, stopwords=None) -> Corpus:
    return build_corpus(read_tsv(path), stopwords)


def normalize_query_text(text: str) -> str:
    """Drop non-alphanumeric characters; the result is a space-joined token string."""
    return " ".join(tokenize(text))


def has_url_marker(text: str) -> bool:
    low = text.lower()
    return any(m in low for m in URL_MARKERS)


def filter_training_queries(raw, index, min_hits: int = 10, exclude: Iterable[str] = (),
                            ids: Sequence[str] | None = None) -> list[Query]:
    """Clean a raw query log into training queries.

    ``raw`` holds query strings (or ``(query_id, text)`` tuples). Queries with
    URL fragments are dropped, punctuation is stripped, duplicates removed,
    queries matching fewer than ``min_hits`` documents are dropped, and so is
    anything whose normalized text appears in ``exclude`` (the evaluation
    queries).
    """
    banned = {normalize_query_text(t) for t in exclude}
    seen: set[str] = set()
    kept = []
    dropped = {"url": 0, "empty": 0, "dup": 0, "eval": 0, "hits": 0}
    for n, item in enumerate(raw):
        if isinstance(item, tuple):
            qid, text = item
        else:
            qid, text = (ids[n] if ids is not None else f"q{n}"), item
        if has_url_marker(text):
            dropped["url"] += 1
            continue
        norm = normalize_query_text(text)
        if not norm:
            dropped["empty"] += 1
            continue
        if norm in seen:
            dropped["dup"] += 1
            continue
        seen.add(norm)
        if norm in banned:
            dropped["eval"] += 1
            continue
        q = index.make_query(qid, norm)
        if q.tokens.size == 0 or index.hit_count(q) < min_hits:
            dropped["hits"] += 1
            continue
        kept.append(q)
    log.info("kept %d training queries, dropped %s", len(kept), dropped)
    return kept


def split_train_validation(queries: Sequence, fraction: float = 0.8, seed: int = 0):
    """Random disjoint split; ``fraction`` of the queries go to the training side."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    n = len(queries)
    if n < 2:
        raise ValueError("need at least two queries to split")
    n_train = min(max(int(round(fraction * n)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    train = [queries[i] for i in sorted(perm[:n_train])]
    val = [queries[i] for i in sorted(perm[n_train:])]
    return train, val
