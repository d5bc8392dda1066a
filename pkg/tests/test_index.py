import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_records
from oracles import bm25_reference
from weakrank.corpus import build_corpus, tokenize
from weakrank.index import BM25Params, InvertedIndex, bm25_score, build_index, retrieve_top_k

P = BM25Params()


def test_counts(hand_index):
    assert hand_index.N == 3
    assert hand_index.avg_dl == 4.0
    cherry = hand_index.vocab.id_of("cherry")
    docs, tfs = hand_index.postings(cherry)
    assert docs.tolist() == [1, 2] and tfs.tolist() == [2, 1]


def test_hand_value(hand_index):
    # cherry in B: df=2 -> idf ln(1.6); tf=2, dl=avg_dl -> saturation 2.2*2/(1.2+2)
    q = hand_index.make_query("q", "cherry")
    expected = math.log(1.5 / 2.5 + 1.0) * (2.2 * 2 / 3.2)
    assert abs(bm25_score(hand_index, P, q, "B") - expected) < 1e-12
    docs = [tokenize(t) for _, t in [("A", "apple banana"), ("B", "apple cherry cherry date"),
                                     ("C", "banana cherry egg fig fig grape")]]
    assert abs(bm25_reference(docs, ["cherry"], 1) - expected) < 1e-12


def test_no_overlap_scores_zero(hand_index):
    q = hand_index.make_query("q", "egg")
    assert bm25_score(hand_index, P, q, "A") == 0.0


def test_oracle_equivalence():
    rng = np.random.default_rng(99)
    words, recs = random_records(rng, n_docs=100, vocab=20)
    index = build_index(build_corpus(recs))
    docs = [tokenize(t) for _, t in recs]
    params = BM25Params(k1=1.2, b=0.75, k3=1000.0)
    worst = 0.0
    for _ in range(100):
        qlen = int(rng.integers(1, 6))
        qtoks = list(rng.choice(words, size=qlen))
        d = int(rng.integers(0, 100))
        q = index.make_query("q", " ".join(qtoks))
        got = bm25_score(index, params, q, recs[d][0])
        worst = max(worst, abs(got - bm25_reference(docs, qtoks, d, 1.2, 0.75, 1000.0)))
    assert worst < 1e-9


def test_score_all_agrees_with_single_doc(random_index):
    q = random_index.make_query("q", "w01 w05 w05 w17")
    top = retrieve_top_k(random_index, P, q, 1000)
    for doc_id, s in top:
        assert abs(s - bm25_score(random_index, P, q, doc_id)) < 1e-12


def test_tf_monotone():
    # same length, same df, same N and avg_dl; only tf(q, x) grows
    scores = []
    for docx in ("q a b c", "q q b c", "q q q c", "q q q q"):
        index = build_index(build_corpus([("x", docx), ("y", "a b c d"), ("z", "e f g h")]))
        scores.append(bm25_score(index, P, index.make_query("q", "q"), "x"))
    assert all(b > a for a, b in zip(scores, scores[1:]))


def test_ties_by_doc_id():
    recs = [("b", "x y"), ("a", "x y"), ("c", "y z")]
    index = build_index(build_corpus(recs))
    top = retrieve_top_k(index, P, index.make_query("q", "x"), 10)
    assert [d for d, _ in top] == ["a", "b"]


def test_only_positive_scores(hand_index):
    top = retrieve_top_k(hand_index, P, hand_index.make_query("q", "egg"), 10)
    assert [d for d, _ in top] == ["C"]


def test_k_precondition(hand_index):
    with pytest.raises(ValueError):
        retrieve_top_k(hand_index, P, hand_index.make_query("q", "egg"), 0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 19), min_size=1, max_size=5), st.integers(1, 60), st.integers(1, 60))
def test_prefix_property(terms, k, k2):
    rng = np.random.default_rng(5)
    _, recs = random_records(rng, n_docs=60)
    index = build_index(build_corpus(recs))
    q = index.make_query("q", " ".join(f"w{t:02d}" for t in terms))
    lo, hi = sorted((k, k2))
    assert retrieve_top_k(index, P, q, lo) == retrieve_top_k(index, P, q, hi)[:lo]


def test_adding_unrelated_doc():
    rng = np.random.default_rng(11)
    _, recs = random_records(rng, n_docs=40)
    q_text = "w03 w07"
    before = build_index(build_corpus(recs))
    after = build_index(build_corpus(recs + [("zz", "unrelated filler text here")]))
    qa, qb = before.make_query("q", q_text), after.make_query("q", q_text)
    ra = retrieve_top_k(before, P, qa, 100)
    rb = retrieve_top_k(after, P, qb, 100)
    # recompute the expected order under the new N and avg_dl
    docs = [tokenize(t) for _, t in recs] + [tokenize("unrelated filler text here")]
    expect = sorted(((-bm25_reference(docs, q_text.split(), i), recs[i][0]) for i in range(len(recs))
                     if bm25_reference(docs, q_text.split(), i) > 0))
    assert [d for d, _ in rb] == [d for _, d in expect]
    assert "zz" not in [d for d, _ in rb]
    assert {d for d, _ in ra} == {d for d, _ in rb}


def test_roundtrip(tmp_path, random_index):
    p = tmp_path / "i.wrix"
    random_index.save(p)
    assert p.read_bytes()[:5] == b"WRIX1"
    back = InvertedIndex.load(p)
    assert back.doc_ids == random_index.doc_ids
    assert back.vocab.terms == random_index.vocab.terms
    assert np.array_equal(back.posting_tf, random_index.posting_tf)
    q = random_index.make_query("q", "w02 w09")
    assert retrieve_top_k(back, P, back.make_query("q", "w02 w09"), 50) == retrieve_top_k(random_index, P, q, 50)


def test_bad_magic(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(b"NOPE!" + b"\0" * 20)
    with pytest.raises(ValueError):
        InvertedIndex.load(p)


def test_params_validated():
    with pytest.raises(ValueError):
        BM25Params(k1=-1)
