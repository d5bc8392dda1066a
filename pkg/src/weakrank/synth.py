"""Synthetic collection with a known relevance oracle.

Generative model:

* ``topics`` topics, each owning ``concepts`` concepts. A concept has one
  canonical surface form and one or more synonyms.
* A document has one topic. Its tokens mix Zipf-distributed background words,
  mentions of its topic's concepts (each mention written with the canonical
  form or a synonym, according to a per-document style), and a few
  "digressions": short bursts of a concept word from an unrelated topic.
* A query picks a topic and 2-3 of its concepts, usually written canonically.
* A document is relevant to a query when it has the query's topic and mentions
  at least one query concept in any surface form (grade 2 for two or more).

BM25 only sees exact surface forms, so it under-ranks relevant documents that
prefer synonyms and over-ranks digressions; a model that learns topical
similarity can recover part of that gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import URL_MARKERS
from .io import atomic_write, header_line

_CONSONANTS = "bcdfghjklmnprstvwz"
_VOWELS = "aeiou"


@dataclass
class SynthConfig:
    docs: int = 5000
    train_queries: int = 2000
    test_queries: int = 100
    sup_queries: int = 30
    topics: int = 50
    concepts: int = 8
    max_synonyms: int = 2
    background: int = 3000
    zipf: float = 1.05
    min_len: int = 60
    max_len: int = 240
    topical_fraction: tuple = (0.2, 0.45)
    digressions: float = 8.0  # mean number of off-topic bursts per document
    burst: tuple = (2, 8)
    canonical_query_prob: float = 0.85
    noise_query_fraction: float = 0.03  # navigational/url-like queries in the raw log
    seed: int = 0


@dataclass
class SynthCollection:
    docs: list = field(default_factory=list)          # (doc_id, text)
    doc_topic: np.ndarray = None
    doc_concepts: list = field(default_factory=list)  # concepts of the own topic mentioned
    train_queries: list = field(default_factory=list)
    test_queries: list = field(default_factory=list)
    sup_queries: list = field(default_factory=list)
    test_qrels: dict = field(default_factory=dict)
    sup_qrels: dict = field(default_factory=dict)
    synonyms: list = field(default_factory=list)      # (topic, concept, [forms])


def _words(rng, n, taken):
    out = []
    while len(out) < n:
        syl = rng.integers(2, 4)
        w = "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(syl))
        if w not in taken and not any(m.strip(".") in w for m in URL_MARKERS):
            taken.add(w)
            out.append(w)
    return out


def generate(cfg: SynthConfig) -> SynthCollection:
    rng = np.random.default_rng([cfg.seed, 101])
    taken: set[str] = set()
    forms = []  # forms[t][c] -> list of surface forms, canonical first
    out = SynthCollection()
    for t in range(cfg.topics):
        row = []
        for c in range(cfg.concepts):
            k = 1 + int(rng.integers(1, cfg.max_synonyms + 1))
            fs = _words(rng, k, taken)
            row.append(fs)
            out.synonyms.append((t, c, fs))
        forms.append(row)
    background = np.array(_words(rng, cfg.background, taken))
    zipf_p = 1.0 / np.arange(1, cfg.background + 1) ** cfg.zipf
    zipf_p /= zipf_p.sum()

    out.doc_topic = rng.integers(0, cfg.topics, size=cfg.docs)
    width = len(str(cfg.docs))
    for n in range(cfg.docs):
        t = int(out.doc_topic[n])
        length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        n_topical = max(1, int(round(length * rng.uniform(*cfg.topical_fraction))))
        focus = rng.dirichlet(np.full(cfg.concepts, 0.6))
        syn_pref = rng.beta(0.6, 0.6)
        tokens = list(rng.choice(background, size=length - n_topical, p=zipf_p))
        mentioned = set()
        for c in rng.choice(cfg.concepts, size=n_topical, p=focus):
            fs = forms[t][c]
            form = fs[0] if rng.random() >= syn_pref else fs[1 + int(rng.integers(0, len(fs) - 1))]
            tokens.append(form)
            mentioned.add(int(c))
        for _ in range(rng.poisson(cfg.digressions)):
            ot = int(rng.integers(0, cfg.topics - 1))
            ot += ot >= t
            oc = int(rng.integers(0, cfg.concepts))
            fs = forms[ot][oc]
            word = fs[int(rng.integers(0, len(fs)))]
            tokens.extend([word] * int(rng.integers(cfg.burst[0], cfg.burst[1] + 1)))
        rng.shuffle(tokens)
        out.docs.append((f"D{n:0{width}d}", " ".join(tokens)))
        out.doc_concepts.append(mentioned)

    by_topic = [np.flatnonzero(out.doc_topic == t) for t in range(cfg.topics)]

    def make_query():
        t = int(rng.integers(0, cfg.topics))
        k = int(rng.integers(2, 4))
        cs = sorted(rng.choice(cfg.concepts, size=k, replace=False).tolist())
        words = []
        for c in cs:
            fs = forms[t][c]
            words.append(fs[0] if rng.random() < cfg.canonical_query_prob else fs[1 + int(rng.integers(0, len(fs) - 1))])
        return t, cs, " ".join(words)

    def judge(t, cs):
        judged = {}
        for n in by_topic[t]:
            hits = len(out.doc_concepts[n] & set(cs))
            if hits:
                judged[out.docs[n][0]] = 2 if hits >= 2 else 1
        return judged

    def unique_queries(count, prefix, banned):
        res, qrels = [], {}
        while len(res) < count:
            t, cs, text = make_query()
            if text in banned:
                continue
            judged = judge(t, cs)
            if not judged:
                continue
            banned.add(text)
            qid = f"{prefix}{len(res) + 1:03d}"
            res.append((qid, text))
            qrels[qid] = judged
        return res, qrels

    seen: set[str] = set()
    out.test_queries, out.test_qrels = unique_queries(cfg.test_queries, "T", seen)
    out.sup_queries, out.sup_qrels = unique_queries(cfg.sup_queries, "S", seen)

    # raw training log: duplicates, url-like noise and the odd evaluation query are
    # left in on purpose, the generate stage filters them
    log_rows = []
    for i in range(cfg.train_queries):
        r = rng.random()
        if r < cfg.noise_query_fraction:
            text = f"www.{background[int(rng.integers(0, 50))]}.com {make_query()[2]}"
        elif r < cfg.noise_query_fraction + 0.005 and out.test_queries:
            text = out.test_queries[int(rng.integers(0, len(out.test_queries)))][1]
        else:
            text = make_query()[2]
        log_rows.append((f"L{i + 1:05d}", text))
    out.train_queries = log_rows
    return out


def write_collection(col: SynthCollection, paths: dict, prov=None) -> None:
    """Write corpus, query files, qrels and the synonym table.

    ``paths`` maps ``corpus``, ``train_queries``, ``test_queries``, ``qrels``,
    ``sup_queries``, ``sup_qrels`` and ``synonyms`` to file paths.
    """
    from .evaluation import write_qrels

    def tsv(rows):
        return header_line(prov) + "".join(f"{a}\t{b}\n" for a, b in rows)

    atomic_write(paths["corpus"], tsv(col.docs))
    atomic_write(paths["train_queries"], tsv(col.train_queries))
    atomic_write(paths["test_queries"], tsv(col.test_queries))
    atomic_write(paths["sup_queries"], tsv(col.sup_queries))
    write_qrels(paths["qrels"], col.test_qrels, prov)
    write_qrels(paths["sup_qrels"], col.sup_qrels, prov)
    syn = header_line(prov) + "".join(f"{t}\t{c}\t{' '.join(fs)}\n" for t, c, fs in col.synonyms)
    atomic_write(Path(paths["synonyms"]), syn)
