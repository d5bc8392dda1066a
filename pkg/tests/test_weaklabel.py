import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weakrank.corpus import build_corpus
from weakrank.index import BM25Params, build_index, retrieve_top_k_docnos
from weakrank.weaklabel import (PAIR_HEADER, POINT_HEADER, generate_pairwise, generate_pointwise, normalize_scores,
                                pair_probability, read_pairwise, read_pointwise, write_pairwise, write_pointwise)

P = BM25Params()


def test_normalize_examples():
    assert normalize_scores([2, 4, 6]).tolist() == [0.0, 0.5, 1.0]
    assert normalize_scores([3, 3, 3]).tolist() == [0.5, 0.5, 0.5]
    with pytest.raises(ValueError):
        normalize_scores([])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30))
def test_normalize_keeps_order(raw):
    out = normalize_scores(raw)
    assert np.all((out >= 0) & (out <= 1))
    raw = np.asarray(raw)
    for i, j in itertools.combinations(range(raw.size), 2):
        if raw[i] < raw[j]:
            assert out[i] <= out[j]


def test_pair_probability_examples():
    assert pair_probability(1, 1) == 0.5
    assert pair_probability(3, 1) == 0.75
    assert abs(pair_probability(0.9, 0.1) - 0.9) < 1e-15
    with pytest.raises(ValueError):
        pair_probability(0, 0)


def _index():
    recs = [(f"d{i}", "apple " * (i % 4 + 1) + "pear " * (i % 3) + "filler " * (7 - i % 5)) for i in range(12)]
    recs.append(("lonely", "kiwi"))
    return build_index(build_corpus(recs))


def test_pointwise_count_and_order():
    index = _index()
    qs = [index.make_query(f"q{i}", t) for i, t in enumerate(["apple", "pear", "apple pear"] * 3 + ["filler"])]
    pts = generate_pointwise(index, P, qs, depth=5)
    assert len(pts) == 50
    for qp in range(len(qs)):
        s = pts.s[pts.qpos == qp]
        assert np.all(np.diff(s) <= 0)


def test_pointwise_zero_hits():
    index = _index()
    pts = generate_pointwise(index, P, [index.make_query("q", "banana")], depth=5)
    assert len(pts) == 0


def test_pairwise_bounds_and_exclusion():
    index = _index()
    qs = [index.make_query("q1", "apple pear"), index.make_query("q2", "apple")]
    prs = generate_pairwise(index, P, qs, depth=5, pairs_per_query=100, seed=1)
    for qp in range(2):
        assert (prs.qpos == qp).sum() <= 20
    assert np.all(prs.s1 != prs.s2)
    t = prs.target
    assert np.all((t >= 0) & (t <= 1) & (t != 0.5))
    # the endpoints only come from the query's lowest candidate, normalized to 0
    ends = (t == 0) | (t == 1)
    assert np.all((prs.s1[ends] == 0) | (prs.s2[ends] == 0))
    assert np.all((t[~ends] > 0) & (t[~ends] < 1))


def test_pairwise_deterministic():
    index = _index()
    qs = [index.make_query("q1", "apple pear")]
    a = list(generate_pairwise(index, P, qs, 8, 10, seed=4))
    b = list(generate_pairwise(index, P, qs, 8, 10, seed=4))
    c = list(generate_pairwise(index, P, qs, 8, 10, seed=5))
    assert a == b and a != c


def test_exhaustive_enumeration():
    index = _index()
    for text in ("apple", "pear", "apple pear", "filler pear"):
        q = index.make_query("q", text)
        docs, raw = retrieve_top_k_docnos(index, P, q, 3)
        s = normalize_scores(raw)
        expect = {(int(docs[i]), int(docs[j])) for i, j in itertools.permutations(range(docs.size), 2)
                  if s[i] != s[j]}
        prs = generate_pairwise(index, P, [q], depth=3, pairs_per_query=6, seed=0)
        got = set(zip(prs.doc1.tolist(), prs.doc2.tolist()))
        assert got == expect


def test_precondition():
    index = _index()
    with pytest.raises(ValueError):
        generate_pairwise(index, P, [], 5, 0)
    with pytest.raises(ValueError):
        generate_pointwise(index, P, [], 0)


def test_file_roundtrip(tmp_path):
    index = _index()
    qs = [index.make_query("q1", "apple pear"), index.make_query("q2", "pear")]
    pts = generate_pointwise(index, P, qs, 6)
    prs = generate_pairwise(index, P, qs, 6, 7, seed=2)
    write_pointwise(tmp_path / "p.tsv", pts)
    write_pairwise(tmp_path / "r.tsv", prs)
    lines = (tmp_path / "p.tsv").read_text().splitlines()
    assert lines[0].startswith("# tool=weakrank") and lines[1] == POINT_HEADER
    assert (tmp_path / "r.tsv").read_text().splitlines()[1] == PAIR_HEADER
    assert list(read_pointwise(tmp_path / "p.tsv", qs, index)) == list(pts)
    assert list(read_pairwise(tmp_path / "r.tsv", qs, index)) == list(prs)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.integers(1, 200), st.integers(0, 10**6))
def test_pairs_distinct(depth, ppq, seed):
    index = _index()
    q = index.make_query("q", "apple pear filler")
    prs = generate_pairwise(index, P, [q], depth, ppq, seed)
    pairs = list(zip(prs.doc1.tolist(), prs.doc2.tolist()))
    assert len(pairs) == len(set(pairs)) <= ppq
    assert all(a != b for a, b in pairs)
