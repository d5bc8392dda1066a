"""Turn BM25 rankings into point-wise and pair-wise training instances."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .corpus import Query
from .index import BM25Params, InvertedIndex, retrieve_top_k_docnos
from .io import atomic_write, header_line, strip_comments

log = logging.getLogger(__name__)

POINT_HEADER = "q_id\tdoc_id\ts"
PAIR_HEADER = "q_id\tdoc1_id\tdoc2_id\ts1\ts2"


class PointInstance(NamedTuple):
    query_id: str
    doc_id: str
    s: float


class PairInstance(NamedTuple):
    query_id: str
    doc1_id: str
    doc2_id: str
    s1: float
    s2: float


def _round9(x: np.ndarray) -> np.ndarray:
    # scores are stored at 9 significant digits; round in memory too so that
    # instances read back from disk are identical to freshly generated ones
    return np.array([float(f"{v:.9g}") for v in np.asarray(x, np.float64)])


def normalize_scores(raw) -> np.ndarray:
    """Min-max scale one query's scores to [0, 1]; a constant list maps to 0.5."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise ValueError("empty score list")
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.full(raw.shape, 0.5)
    return (raw - lo) / (hi - lo)


def pair_probability(s1, s2):
    """Probability that the first document should rank above the second."""
    s1 = np.asarray(s1, np.float64)
    s2 = np.asarray(s2, np.float64)
    total = s1 + s2
    if np.any(total == 0):
        raise ValueError("pair_probability undefined when s1 + s2 == 0")
    p = s1 / total
    return float(p) if p.ndim == 0 else p


@dataclass
class PointSet:
    """Columnar point-wise training set; ``qpos`` indexes into ``queries``."""

    queries: list[Query]
    qpos: np.ndarray
    doc: np.ndarray
    s: np.ndarray
    doc_ids: Sequence[str] = ()

    arity = 1

    def __len__(self) -> int:
        return int(self.qpos.size)

    def __iter__(self) -> Iterator[PointInstance]:
        for qp, d, s in zip(self.qpos, self.doc, self.s):
            yield PointInstance(self.queries[qp].query_id, self.doc_ids[d], float(s))

    def subset(self, idx) -> "PointSet":
        return PointSet(self.queries, self.qpos[idx], self.doc[idx], self.s[idx], self.doc_ids)


@dataclass
class PairSet:
    queries: list[Query]
    qpos: np.ndarray
    doc1: np.ndarray
    doc2: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    doc_ids: Sequence[str] = ()

    arity = 2

    def __len__(self) -> int:
        return int(self.qpos.size)

    def __iter__(self) -> Iterator[PairInstance]:
        for qp, a, b, s1, s2 in zip(self.qpos, self.doc1, self.doc2, self.s1, self.s2):
            yield PairInstance(self.queries[qp].query_id, self.doc_ids[a], self.doc_ids[b],
                               float(s1), float(s2))

    def subset(self, idx) -> "PairSet":
        return PairSet(self.queries, self.qpos[idx], self.doc1[idx], self.doc2[idx],
                       self.s1[idx], self.s2[idx], self.doc_ids)

    @property
    def target(self) -> np.ndarray:
        return pair_probability(self.s1, self.s2)


def _candidates(index, params, q, depth):
    docs, raw = retrieve_top_k_docnos(index, params, q, depth)
    if docs.size == 0:
        log.info("query %s has no hits, skipped", q.query_id)
        return docs, raw
    return docs, _round9(normalize_scores(raw))


def generate_pointwise(index: InvertedIndex, params: BM25Params, queries: Sequence[Query],
                       depth: int = 1000) -> PointSet:
    if depth < 1:
        raise ValueError("depth must be >= 1")
    qpos, docs, scores = [], [], []
    for i, q in enumerate(queries):
        d, s = _candidates(index, params, q, depth)
        qpos.append(np.full(d.size, i, np.int64))
        docs.append(d)
        scores.append(s)
    return PointSet(list(queries), _cat(qpos, np.int64), _cat(docs, np.int64), _cat(scores, np.float64),
                    index.doc_ids)


def generate_pairwise(index: InvertedIndex, params: BM25Params, queries: Sequence[Query],
                      depth: int = 1000, pairs_per_query: int = 1000, seed: int = 0) -> PairSet:
    """Sample ordered candidate pairs uniformly without replacement.

    Pairs whose normalized scores tie are never emitted. Each query gets its
    own generator seeded from ``(seed, query position)``.
    """
    if pairs_per_query < 1:
        raise ValueError("pairs_per_query must be >= 1")
    cols = {k: [] for k in ("qpos", "d1", "d2", "s1", "s2")}
    for i, q in enumerate(queries):
        d, s = _candidates(index, params, q, depth)
        if np.unique(s).size < 2:
            if d.size:
                log.info("query %s has fewer than two distinct scores, skipped", q.query_id)
            continue
        a, b = np.nonzero(s[:, None] != s[None, :])  # row-major: all ordered pairs, a != b implied
        take = min(pairs_per_query, a.size)
        rng = np.random.default_rng([seed, i])
        pick = rng.choice(a.size, size=take, replace=False)
        a, b = a[pick], b[pick]
        cols["qpos"].append(np.full(take, i, np.int64))
        cols["d1"].append(d[a])
        cols["d2"].append(d[b])
        cols["s1"].append(s[a])
        cols["s2"].append(s[b])
    return PairSet(list(queries), _cat(cols["qpos"], np.int64), _cat(cols["d1"], np.int64),
                   _cat(cols["d2"], np.int64), _cat(cols["s1"], np.float64), _cat(cols["s2"], np.float64),
                   index.doc_ids)


def _cat(parts, dtype):
    return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype)


def write_pointwise(path: str | Path, data: PointSet, prov: dict | None = None) -> None:
    lines = [header_line(prov), POINT_HEADER + "\n"]
    for inst in data:
        lines.append(f"{inst.query_id}\t{inst.doc_id}\t{inst.s:.9g}\n")
    atomic_write(path, "".join(lines))


def write_pairwise(path: str | Path, data: PairSet, prov: dict | None = None) -> None:
    lines = [header_line(prov), PAIR_HEADER + "\n"]
    for inst in data:
        lines.append(f"{inst.query_id}\t{inst.doc1_id}\t{inst.doc2_id}\t{inst.s1:.9g}\t{inst.s2:.9g}\n")
    atomic_write(path, "".join(lines))


def _read_rows(path, header):
    with open(path, encoding="utf-8") as fh:
        rows = strip_comments(fh)
        first = next(rows, None)
        if first is None or first.rstrip("\n") != header:
            raise ValueError(f"{path}: missing header {header!r}")
        return [r.rstrip("\n").split("\t") for r in rows]


def read_pointwise(path: str | Path, queries: Sequence[Query], index: InvertedIndex) -> PointSet:
    qmap = {q.query_id: i for i, q in enumerate(queries)}
    rows = _read_rows(path, POINT_HEADER)
    qpos = np.array([qmap[r[0]] for r in rows], np.int64)
    doc = np.array([index.docno(r[1]) for r in rows], np.int64)
    s = np.array([float(r[2]) for r in rows], np.float64)
    return PointSet(list(queries), qpos, doc, s, index.doc_ids)


def read_pairwise(path: str | Path, queries: Sequence[Query], index: InvertedIndex) -> PairSet:
    qmap = {q.query_id: i for i, q in enumerate(queries)}
    rows = _read_rows(path, PAIR_HEADER)
    qpos = np.array([qmap[r[0]] for r in rows], np.int64)
    d1 = np.array([index.docno(r[1]) for r in rows], np.int64)
    d2 = np.array([index.docno(r[2]) for r in rows], np.int64)
    s1 = np.array([float(r[3]) for r in rows], np.float64)
    s2 = np.array([float(r[4]) for r in rows], np.float64)
    return PairSet(list(queries), qpos, d1, d2, s1, s2, index.doc_ids)
