"""Inverted index and the BM25 scorer used both as pseudo-labeler and as
first-stage candidate generator.

Index file layout (all integers little-endian)::

    b"WRIX1"
    u32 meta_len, meta_len bytes of UTF-8 JSON (version, provenance, stopwords)
    u64 V, then V x (u32 byte_len, UTF-8 term), int64[V] collection_tf, int64[V] df
    u64 N, then N x (u32 byte_len, UTF-8 doc_id), int64[N] doc_lengths
    int64[V+1] term_ptr, int64[nnz] posting_doc, int64[nnz] posting_tf

Postings for term ``t`` are ``posting_doc[term_ptr[t]:term_ptr[t+1]]`` (internal
document numbers, ascending) with matching ``posting_tf``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .corpus import Corpus, Query, Vocabulary, tokenize
from .io import atomic_write

MAGIC = b"WRIX1"


@dataclass(frozen=True)
class BM25Params:
    k1: float = 1.2
    b: float = 0.75
    k3: float = 1000.0

    def __post_init__(self):
        if self.k1 < 0 or not 0 <= self.b <= 1 or self.k3 < 0:
            raise ValueError(f"invalid BM25 parameters {self}")


class InvertedIndex:
    def __init__(self, vocab: Vocabulary, doc_ids, doc_lengths, term_ptr, posting_doc, posting_tf,
                 stopwords=frozenset(), meta=None):
        self.vocab = vocab
        self.doc_ids = list(doc_ids)
        self.doc_lengths = np.asarray(doc_lengths, np.int64)
        self.term_ptr = np.asarray(term_ptr, np.int64)
        self.posting_doc = np.asarray(posting_doc, np.int64)
        self.posting_tf = np.asarray(posting_tf, np.int64)
        self.stopwords = frozenset(stopwords)
        self.meta = dict(meta or {})
        self.N = len(self.doc_ids)
        if self.N == 0:
            raise ValueError("empty corpus")
        self.avg_dl = float(self.doc_lengths.sum()) / self.N
        self._docno = {d: i for i, d in enumerate(self.doc_ids)}
        # position of each document in ascending doc_id order, used for tie breaks
        order = sorted(range(self.N), key=self.doc_ids.__getitem__)
        self.doc_rank = np.empty(self.N, np.int64)
        self.doc_rank[order] = np.arange(self.N)
        self._doc_tf = None

    @property
    def df(self) -> np.ndarray:
        return self.vocab.df

    @property
    def collection_tf(self) -> np.ndarray:
        return self.vocab.collection_tf

    def docno(self, doc_id: str) -> int:
        try:
            return self._docno[doc_id]
        except KeyError:
            raise KeyError(f"unknown doc_id {doc_id!r}") from None

    def postings(self, term: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.term_ptr[term], self.term_ptr[term + 1]
        return self.posting_doc[lo:hi], self.posting_tf[lo:hi]

    @property
    def doc_tf(self) -> sp.csr_matrix:
        """N x |V| term-frequency matrix with sorted column indices."""
        if self._doc_tf is None:
            V = len(self.vocab)
            csc = sp.csc_matrix((self.posting_tf.astype(np.float64), self.posting_doc, self.term_ptr),
                                shape=(self.N, V))
            csr = csc.tocsr()
            csr.sort_indices()
            self._doc_tf = csr
        return self._doc_tf

    def tf(self, term: int, doc: int) -> int:
        docs, tfs = self.postings(term)
        j = np.searchsorted(docs, doc)
        if j < docs.size and docs[j] == doc:
            return int(tfs[j])
        return 0

    def idf(self, terms=None) -> np.ndarray:
        df = self.vocab.df if terms is None else self.vocab.df[terms]
        return bm25_idf(self.N, df)

    def make_query(self, query_id: str, text: str) -> Query:
        return Query(query_id, text, self.vocab.encode(tokenize(text, self.stopwords)))

    def hit_count(self, q: Query) -> int:
        """Number of documents containing at least one query term."""
        terms = np.unique(q.tokens)
        if terms.size == 0:
            return 0
        docs = np.concatenate([self.postings(int(t))[0] for t in terms])
        return int(np.unique(docs).size)

    def save(self, path: str | Path) -> None:
        atomic_write(path, self.to_bytes())

    def to_bytes(self) -> bytes:
        meta = dict(self.meta)
        meta["stopwords"] = sorted(self.stopwords)
        meta_b = json.dumps(meta, sort_keys=True).encode("utf-8")
        parts = [MAGIC, struct.pack("<I", len(meta_b)), meta_b]
        parts.append(_pack_strings(self.vocab.terms))
        parts.append(self.vocab.collection_tf.astype("<i8").tobytes())
        parts.append(self.vocab.df.astype("<i8").tobytes())
        parts.append(_pack_strings(self.doc_ids))
        parts.append(self.doc_lengths.astype("<i8").tobytes())
        for arr in (self.term_ptr, self.posting_doc, self.posting_tf):
            parts.append(arr.astype("<i8").tobytes())
        return b"".join(parts)

    @classmethod
    def load(cls, path: str | Path) -> "InvertedIndex":
        return cls.from_bytes(Path(path).read_bytes())

    @classmethod
    def from_bytes(cls, buf: bytes) -> "InvertedIndex":
        if buf[:5] != MAGIC:
            raise ValueError("not a WRIX1 index file")
        pos = 5
        (meta_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        meta = json.loads(buf[pos:pos + meta_len].decode("utf-8"))
        pos += meta_len
        terms, pos = _unpack_strings(buf, pos)
        V = len(terms)
        ctf, pos = _read_i8(buf, pos, V)
        df, pos = _read_i8(buf, pos, V)
        doc_ids, pos = _unpack_strings(buf, pos)
        N = len(doc_ids)
        lengths, pos = _read_i8(buf, pos, N)
        term_ptr, pos = _read_i8(buf, pos, V + 1)
        nnz = int(term_ptr[-1])
        pdoc, pos = _read_i8(buf, pos, nnz)
        ptf, pos = _read_i8(buf, pos, nnz)
        if pos != len(buf):
            raise ValueError("trailing bytes in index file")
        stop = meta.pop("stopwords", [])
        return cls(Vocabulary(terms, ctf, df), doc_ids, lengths, term_ptr, pdoc, ptf, stop, meta)


def _pack_strings(items) -> bytes:
    out = [struct.pack("<Q", len(items))]
    for s in items:
        b = s.encode("utf-8")
        out.append(struct.pack("<I", len(b)))
        out.append(b)
    return b"".join(out)


def _unpack_strings(buf, pos):
    (n,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    items = []
    for _ in range(n):
        (ln,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        items.append(buf[pos:pos + ln].decode("utf-8"))
        pos += ln
    return items, pos


def _read_i8(buf, pos, n):
    arr = np.frombuffer(buf, dtype="<i8", count=n, offset=pos).astype(np.int64)
    return arr, pos + 8 * n


def build_index(corpus: Corpus, meta=None) -> InvertedIndex:
    docs = corpus.documents
    if not docs:
        raise ValueError("empty corpus")
    V = len(corpus.vocab)
    lengths = np.array([d.length for d in docs], np.int64)
    rows, cols, vals = [], [], []
    for n, d in enumerate(docs):
        if d.length == 0:
            continue
        terms, counts = np.unique(d.tokens, return_counts=True)
        rows.append(np.full(terms.size, n, np.int64))
        cols.append(terms)
        vals.append(counts)
    if rows:
        rows_a, cols_a, vals_a = map(np.concatenate, (rows, cols, vals))
    else:
        rows_a = cols_a = vals_a = np.zeros(0, np.int64)
    # order postings by (term, doc)
    order = np.lexsort((rows_a, cols_a))
    pdoc = rows_a[order]
    ptf = vals_a[order]
    term_ptr = np.zeros(V + 1, np.int64)
    np.cumsum(np.bincount(cols_a, minlength=V), out=term_ptr[1:])
    return InvertedIndex(corpus.vocab, [d.doc_id for d in docs], lengths, term_ptr, pdoc, ptf,
                         corpus.stopwords, meta)


def bm25_idf(N, df):
    df = np.asarray(df, np.float64)
    return np.log((N - df + 0.5) / (df + 0.5) + 1.0)


def _query_terms(q: Query):
    terms, qtf = np.unique(q.tokens, return_counts=True)
    return terms, qtf


def score_all(index: InvertedIndex, params: BM25Params, q: Query) -> np.ndarray:
    """BM25 score of every document for ``q`` (zeros where no term overlaps)."""
    scores = np.zeros(index.N)
    terms, qtf = _query_terms(q)
    if terms.size == 0:
        return scores
    k1, b, k3 = params.k1, params.b, params.k3
    norm = k1 * (1.0 - b + b * index.doc_lengths / index.avg_dl)
    idf = index.idf(terms)
    qweight = (k3 + 1.0) * qtf / (k3 + qtf)
    for t, w_idf, w_q in zip(terms, idf, qweight):
        docs, tfs = index.postings(int(t))
        tfs = tfs.astype(np.float64)
        scores[docs] += w_idf * tfs * (k1 + 1.0) / (tfs + norm[docs]) * w_q
    return scores


def bm25_score(index: InvertedIndex, params: BM25Params, q: Query, doc_id: str) -> float:
    d = index.docno(doc_id)
    terms, qtf = _query_terms(q)
    k1, b, k3 = params.k1, params.b, params.k3
    norm = k1 * (1.0 - b + b * index.doc_lengths[d] / index.avg_dl)
    score = 0.0
    for t, n in zip(terms, qtf):
        tf = index.tf(int(t), d)
        if tf == 0:
            continue
        idf = bm25_idf(index.N, index.df[t])
        score += idf * tf * (k1 + 1.0) / (tf + norm) * ((k3 + 1.0) * n / (k3 + n))
    return float(score)


def rank_scores(index: InvertedIndex, scores: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    """Sort ``candidates`` by descending score, ascending doc_id on ties; keep ``k``."""
    order = np.lexsort((index.doc_rank[candidates], -scores[candidates]))
    return candidates[order[:k]]


def retrieve_top_k(index: InvertedIndex, params: BM25Params, q: Query, k: int):
    """Top ``k`` documents with positive score as ``[(doc_id, score), ...]``."""
    docs, scores = retrieve_top_k_docnos(index, params, q, k)
    return [(index.doc_ids[d], float(s)) for d, s in zip(docs, scores)]


def retrieve_top_k_docnos(index: InvertedIndex, params: BM25Params, q: Query, k: int):
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = score_all(index, params, q)
    hits = np.flatnonzero(scores > 0)
    top = rank_scores(index, scores, hits, k)
    return top, scores[top]
