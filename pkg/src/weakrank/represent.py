"""Input feature functions mapping (query, document[, document]) to a vector.

Three flavours:

* ``dense``  -- collection/document statistics of the first ``k`` query terms
* ``sparse`` -- concatenated term-frequency vectors (collection, query, docs)
* ``embed``  -- weighted bag-of-embeddings per field, parameters trained jointly

Batch methods take ``qterms`` (a list of term-id arrays, one per instance) and
integer document numbers ``d1`` (and ``d2`` for pair inputs).
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .index import InvertedIndex
from .nncore import EMBEDDING_SOURCES, EmbeddingTable, EmptyFieldError, SharedRowMatrix, fields_matrix

log = logging.getLogger(__name__)

REPRESENTATIONS = ("dense", "sparse", "embed")


def first_unique(terms, k=None) -> np.ndarray:
    """Distinct in-vocabulary terms in order of first occurrence, at most ``k``."""
    seen, out = set(), []
    for t in np.asarray(terms, np.int64):
        if t < 0 or t in seen:
            continue
        seen.add(int(t))
        out.append(int(t))
    if k is not None:
        out = out[:k]
    return np.asarray(out, np.int64)


class DenseRepresentation:
    name = "dense"

    def __init__(self, index: InvertedIndex, k: int = 5, log1p: bool = False):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.index = index
        self.k = int(k)
        self.log1p = bool(log1p)
        self.params = {}

    def input_dim(self, arity: int) -> int:
        return 3 + 2 * self.k if arity == 1 else 4 + 3 * self.k

    def owners(self, arity: int) -> np.ndarray:
        """Which input each column comes from: 0 query/collection, 1 first doc, 2 second doc."""
        own = np.zeros(self.input_dim(arity), np.int64)
        own[2] = 1
        own[4:3 + 2 * self.k:2] = 1
        if arity == 2:
            own[3 + 2 * self.k:] = 2
        return own

    def features(self, qterms, d1, d2=None) -> np.ndarray:
        idx = self.index
        d1 = np.asarray(d1, np.int64)
        B = d1.size
        arity = 1 if d2 is None else 2
        X = np.zeros((B, self.input_dim(arity)))
        X[:, 0] = idx.N
        X[:, 1] = idx.avg_dl
        X[:, 2] = idx.doc_lengths[d1]
        rows, slots, terms = [], [], []
        for r, q in enumerate(qterms):
            t = first_unique(q, self.k)
            rows.extend([r] * t.size)
            slots.extend(range(t.size))
            terms.extend(t.tolist())
        rows = np.asarray(rows, np.int64)
        slots = np.asarray(slots, np.int64)
        terms = np.asarray(terms, np.int64)
        if rows.size:
            X[rows, 3 + 2 * slots] = idx.df[terms]
            X[rows, 4 + 2 * slots] = self._tf(d1[rows], terms)
        if d2 is not None:
            d2 = np.asarray(d2, np.int64)
            base = 3 + 2 * self.k
            X[:, base] = idx.doc_lengths[d2]
            if rows.size:
                X[rows, base + 1 + slots] = self._tf(d2[rows], terms)
        if self.log1p:
            X = np.log1p(X)
        return X

    def _tf(self, docs, terms):
        return np.asarray(self.index.doc_tf[docs, terms], np.float64).ravel()

    def forward(self, qterms, d1, d2=None):
        return self.features(qterms, d1, d2), None

    def backward(self, cache, dX):
        return {}

    def valid(self, qterms, d1, d2=None):
        return np.ones(len(qterms), bool)

    def split(self, q, docs, arity):
        """Query-only row and per-document rows whose sums rebuild the full input."""
        own = self.owners(arity)
        docs = np.asarray(docs, np.int64)
        F = self.features([q] * docs.size, docs, docs if arity == 2 else None)
        xq = np.where(own == 0, F[:1], 0.0)
        Xa = np.where(own == 1, F, 0.0)
        Xb = np.where(own == 2, F, 0.0) if arity == 2 else None
        return xq, Xa, Xb


class SparseRepresentation:
    name = "sparse"

    def __init__(self, index: InvertedIndex, log1p: bool = False):
        self.index = index
        self.V = len(index.vocab)
        self.params = {}
        self.log1p = bool(log1p)
        ctf = index.collection_tf.astype(np.float64)
        self._ctf_row = self._damp(sp.csr_matrix(ctf.reshape(1, -1)))

    def _damp(self, m):
        # log1p(0) = 0, so transforming the stored entries keeps the pattern
        if self.log1p:
            m = m.copy()
            m.data = np.log1p(m.data)
        return m

    def input_dim(self, arity: int) -> int:
        return (3 if arity == 1 else 4) * self.V

    def features(self, qterms, d1, d2=None) -> sp.csr_matrix:
        return self.forward(qterms, d1, d2)[0].tocsr()

    def forward(self, qterms, d1, d2=None):
        # tfv_c is the same for every row; keep it as one shared row
        B = len(qterms)
        blocks = [sp.csr_matrix((B, self.V)), fields_matrix(qterms, self.V),
                  self.index.doc_tf[np.asarray(d1, np.int64)]]
        if d2 is not None:
            blocks.append(self.index.doc_tf[np.asarray(d2, np.int64)])
        rows = self._damp(sp.hstack(blocks, format="csr"))
        width = rows.shape[1]
        shared = sp.hstack([self._ctf_row, sp.csr_matrix((1, width - self.V))], format="csr")
        return SharedRowMatrix(rows, shared), None

    def backward(self, cache, dX):
        return {}

    def valid(self, qterms, d1, d2=None):
        return np.ones(len(qterms), bool)

    def split(self, q, docs, arity):
        V = self.V
        docs = np.asarray(docs, np.int64)
        n = docs.size
        width = self.input_dim(arity)
        xq = sp.hstack([self._ctf_row, self._damp(fields_matrix([q], V)), sp.csr_matrix((1, width - 2 * V))],
                       format="csr")
        dtf = self._damp(self.index.doc_tf[docs])
        pad = lambda c: sp.csr_matrix((n, c))  # noqa: E731
        if arity == 1:
            Xa = sp.hstack([pad(2 * V), dtf], format="csr")
            return xq, Xa, None
        Xa = sp.hstack([pad(2 * V), dtf, pad(V)], format="csr")
        Xb = sp.hstack([pad(3 * V), dtf], format="csr")
        return xq, Xa, Xb


class EmbedRepresentation:
    name = "embed"

    def __init__(self, index: InvertedIndex, dim: int = 100, weighting: str = "learned",
                 source: str = "learned", rng=None):
        if source not in EMBEDDING_SOURCES:
            raise ValueError(f"unknown embedding source {source!r}")
        self.index = index
        self.source = source
        self.table = EmbeddingTable(len(index.vocab), dim, weighting, idf=index.idf(),
                                    train_embeddings=(source != "pretrained-frozen"), rng=rng)

    @property
    def dim(self) -> int:
        return self.table.dim

    @property
    def params(self):
        return self.table.params

    def input_dim(self, arity: int) -> int:
        return (2 if arity == 1 else 3) * self.dim

    def _fields(self, qterms, docs_list):
        V = len(self.index.vocab)
        out = [fields_matrix(qterms, V)]
        for d in docs_list:
            out.append(self.index.doc_tf[np.asarray(d, np.int64)])
        return out

    def forward(self, qterms, d1, d2=None):
        docs = [d1] if d2 is None else [d1, d2]
        vecs, caches = [], []
        for f in self._fields(qterms, docs):
            v, c = self.table.compose(f)
            vecs.append(v)
            caches.append(c)
        return np.hstack(vecs), caches

    def features(self, qterms, d1, d2=None) -> np.ndarray:
        return self.forward(qterms, d1, d2)[0]

    def backward(self, caches, dX) -> dict:
        m = self.dim
        total = {}
        for i, c in enumerate(caches):
            for k, g in self.table.backward(c, dX[:, i * m:(i + 1) * m]).items():
                total[k] = total[k] + g if k in total else g
        return total

    def valid(self, qterms, d1, d2=None):
        ok = np.array([np.any(np.asarray(q) >= 0) for q in qterms], bool)
        ok &= self.index.doc_lengths[np.asarray(d1, np.int64)] > 0
        if d2 is not None:
            ok &= self.index.doc_lengths[np.asarray(d2, np.int64)] > 0
        return ok

    def split(self, q, docs, arity):
        docs = np.asarray(docs, np.int64)
        m = self.dim
        qv, _ = self.table.compose(fields_matrix([q], len(self.index.vocab)))
        dv, _ = self.table.compose(self.index.doc_tf[docs])
        n = docs.size
        width = self.input_dim(arity)
        xq = np.zeros((1, width))
        xq[:, :m] = qv
        Xa = np.zeros((n, width))
        Xa[:, m:2 * m] = dv
        Xb = None
        if arity == 2:
            Xb = np.zeros((n, width))
            Xb[:, 2 * m:] = dv
        return xq, Xa, Xb

    def load_pretrained(self, path: str | Path) -> int:
        n = load_pretrained_embeddings(path, self.index, self.table)
        log.info("initialized %d/%d embeddings from %s", n, len(self.index.vocab), path)
        return n


def load_pretrained_embeddings(path, index: InvertedIndex, table: EmbeddingTable) -> int:
    """Copy vectors from a ``term f1 ... fm`` text file into ``table.E``.

    Terms not in the file keep their random initialization; terms not in the
    vocabulary are ignored. Returns the number of rows filled.
    """
    found = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2 or line.startswith("#"):
                continue
            t = index.vocab.id_of(parts[0])
            if t < 0:
                continue
            vec = np.asarray(parts[1:], np.float64)
            if vec.size != table.dim:
                raise ValueError(f"{path}:{lineno}: expected {table.dim} floats, got {vec.size}")
            table.E[t] = vec
            found += 1
    return found


def make_representation(name: str, index: InvertedIndex, *, dense_k=5, dense_log1p=False, sparse_log1p=False,
                        embed_dim=100, weighting="learned", embedding_source="learned", rng=None):
    if name == "dense":
        return DenseRepresentation(index, dense_k, dense_log1p)
    if name == "sparse":
        return SparseRepresentation(index, sparse_log1p)
    if name == "embed":
        return EmbedRepresentation(index, embed_dim, weighting, embedding_source, rng)
    raise ValueError(f"unknown representation {name!r}")


# single-instance conveniences

def dense_features(q, d, index: InvertedIndex, k=5, d2=None, log1p=False) -> np.ndarray:
    rep = DenseRepresentation(index, k, log1p)
    return rep.features([_terms(q)], [d], None if d2 is None else [d2])[0]


def sparse_features(q, d, index: InvertedIndex, d2=None) -> sp.csr_matrix:
    rep = SparseRepresentation(index)
    return rep.features([_terms(q)], [d], None if d2 is None else [d2])


def embed_features(q, d, rep: EmbedRepresentation, d2=None) -> np.ndarray:
    terms = _terms(q)
    if not np.any(terms >= 0):
        raise EmptyFieldError("query has no in-vocabulary terms")
    return rep.features([terms], [d], None if d2 is None else [d2])[0]


def _terms(q):
    return np.asarray(getattr(q, "tokens", q), np.int64)
