import math

import numpy as np
import pytest
import scipy.special
import scipy.stats
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_fixture
from oracles import ap_oracle, ndcg_oracle, precision_oracle
from weakrank.evaluation import (average_precision, betainc, compare_runs, evaluate_run, format_report, mean_metrics,
                                 ndcg_at, paired_ttest, pearson, precision_at, read_qrels, read_run, write_qrels,
                                 write_run)


def test_metrics_match_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        ranked, judged = random_fixture(rng)
        worst = max(worst,
                    abs(average_precision(ranked, judged) - ap_oracle(ranked, judged)),
                    abs(precision_at(ranked, judged) - precision_oracle(ranked, judged)),
                    abs(ndcg_at(ranked, judged) - ndcg_oracle(ranked, judged)))
    assert worst < 1e-12


def test_ndcg_random_permutations():
    rng = np.random.default_rng(5)
    docs = [f"d{i}" for i in range(20)]
    judged = {d: int(rng.integers(0, 3)) for d in docs}
    for _ in range(200):
        ranked = list(rng.permutation(docs))
        assert abs(ndcg_at(ranked, judged) - ndcg_oracle(ranked, judged)) < 1e-12


def test_ap_examples():
    assert abs(average_precision(["a", "x", "b"], {"a": 1, "b": 1}) - (1 + 2 / 3) / 2) < 1e-12
    assert average_precision(["a", "b", "x"], {"a": 1, "b": 2}) == 1.0
    assert average_precision(["x", "y"], {"a": 1}) == 0.0


def test_precision_examples():
    ranked = [f"d{i}" for i in range(20)]
    assert precision_at(ranked, {f"d{i}": 1 for i in range(0, 20, 4)}) == 0.25
    assert precision_at(ranked, {}) == 0.0
    assert precision_at(ranked[:10], {d: 1 for d in ranked[:10]}, 20) == 0.5
    with pytest.raises(ValueError):
        precision_at(ranked, {}, 0)


def test_ndcg_examples():
    assert ndcg_at(["a", "b"], {"a": 1}) == 1.0
    assert abs(ndcg_at(["x", "a"], {"a": 1}) - 1 / math.log2(3)) < 1e-12
    assert abs(1 / math.log2(3) - 0.6309) < 1e-4


def test_ap_reversal_sanity():
    # every relevant item in the top half: reversing can only hurt
    rng = np.random.default_rng(0)
    for n in range(2, 9):
        for _ in range(20):
            ranked = [f"d{i}" for i in range(2 * n)]
            rel = rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)
            judged = {ranked[i]: 1 for i in rel}
            assert average_precision(ranked[::-1], judged) <= average_precision(ranked, judged)


@given(st.lists(st.sampled_from("abcdefgh"), unique=True), st.dictionaries(st.sampled_from("abcdefghij"),
                                                                           st.integers(0, 3)))
def test_metrics_in_unit_interval(ranked, judged):
    for f in (average_precision, precision_at, ndcg_at):
        assert 0.0 <= f(ranked, judged) <= 1.0


def test_means_only_over_judged_queries():
    qrels = {"q1": {"a": 1}, "q2": {"b": 0}, "q3": {"c": 1}}
    run = {"q1": [("a", 1.0)], "q2": [("b", 1.0)], "q3": [("x", 1.0)]}
    per = evaluate_run(run, qrels)
    assert sorted(per) == ["q1", "q3"]
    assert mean_metrics(per)["map"] == 0.5


def test_ttest_matches_scipy():
    rng = np.random.default_rng(77)
    for i in range(20):
        n = int(rng.integers(2, 60))
        a = rng.uniform(size=n)
        b = np.clip(a + rng.normal(0.02 * (i % 4), 0.1, size=n), 0, 1)
        t, p, _ = paired_ttest(a, b)
        ref = scipy.stats.ttest_rel(a, b)
        assert abs(t - ref.statistic) < 1e-9 * max(1, abs(ref.statistic))
        assert abs(p - ref.pvalue) < 1e-6


def test_ttest_five_pair_fixture():
    a = [0.31, 0.45, 0.28, 0.52, 0.40]
    b = [0.25, 0.41, 0.30, 0.44, 0.33]
    t, p, _ = paired_ttest(a, b)
    assert abs(p - scipy.stats.ttest_rel(a, b).pvalue) < 1e-6


def test_ttest_examples():
    t, p, sig = paired_ttest([0.1, 0.2, 0.3], [0.1, 0.2, 0.3])
    assert t == 0 and p == 1.0 and not sig
    with pytest.raises(ValueError):
        paired_ttest([1.0], [2.0])


def test_bonferroni_threshold():
    rng = np.random.default_rng(3)
    # find fixtures with p between 0.05/9 and 0.05
    hits = 0
    for _ in range(500):
        a = rng.uniform(size=15)
        b = a + rng.normal(0.04, 0.08, size=15)
        _, p, sig1 = paired_ttest(a, b, 1)
        _, _, sig9 = paired_ttest(a, b, 9)
        assert sig1 == (p < 0.05) and sig9 == (p < 0.05 / 9)
        hits += 0.05 / 9 <= p < 0.05
    assert hits > 0


@given(st.floats(0.1, 50), st.floats(0.1, 50), st.floats(0, 1))
def test_betainc_matches_scipy(a, b, x):
    assert abs(betainc(a, b, x) - scipy.special.betainc(a, b, x)) < 1e-10


def test_run_and_qrels_files(tmp_path):
    run = {"q2": [("d9", 3.5), ("d1", 3.5)], "q1": [("d4", 0.25)]}
    write_run(tmp_path / "r.txt", run, "tag1", query_order=["q2", "q1"])
    lines = (tmp_path / "r.txt").read_text().splitlines()
    assert lines[0].startswith("# tool=weakrank")
    assert lines[1] == "q2 Q0 d9 1 3.5 tag1"
    back, tag = read_run(tmp_path / "r.txt")
    assert back == run and tag == "tag1"
    qrels = {"q1": {"d4": 2, "d5": 0}}
    write_qrels(tmp_path / "q.txt", qrels)
    assert read_qrels(tmp_path / "q.txt") == qrels


def test_compare_runs_report():
    qrels = {f"q{i}": {"a": 1, "b": 1} for i in range(5)}
    good = {q: [("a", 2.0), ("b", 1.0)] for q in qrels}
    bad = {q: [("x", 2.0), ("a", 1.0)] for q in qrels}
    per, means, sig = compare_runs({"base": bad, "model": good}, qrels, "base")
    assert means["model"]["map"] == 1.0
    assert sig[("model", "map")]["direction"] == 1 and sig[("model", "map")]["significant"]
    text = format_report(per, means, sig, "base")
    assert "sig\tmodel\tmap" in text


def test_pearson():
    x = np.arange(10.0)
    assert abs(pearson(x, 3 * x + 1) - 1) < 1e-12
    assert abs(pearson(x, -x) + 1) < 1e-12
    assert abs(pearson(x, x ** 2) - scipy.stats.pearsonr(x, x ** 2)[0]) < 1e-12
