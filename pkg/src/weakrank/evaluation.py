"""TREC-style evaluation: run/qrels files, MAP, P@k, nDCG@k, paired t-test.

Per-query metrics are averaged only over queries with at least one relevant
judgment (the trec_eval convention). A run is ordered exactly as written;
scores are informational ("order wins").
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .io import atomic_write, header_line, strip_comments

MAP_CUTOFF = 1000
P_CUTOFF = 20
NDCG_CUTOFF = 20
METRICS = ("map", "P_20", "ndcg_cut_20")


# ---------------------------------------------------------------- files

def read_qrels(path) -> dict[str, dict[str, int]]:
    """``qid 0 docid grade`` lines into ``{qid: {docid: grade}}``."""
    qrels: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in strip_comments(fh):
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}: bad qrels line {line!r}")
            qid, _, docid, grade = parts
            g = int(grade)
            if g < 0:
                raise ValueError(f"{path}: negative grade in {line!r}")
            qrels.setdefault(qid, {})[docid] = g
    return qrels


def write_qrels(path, qrels, prov=None) -> None:
    lines = [header_line(prov)]
    for qid in sorted(qrels):
        for docid in sorted(qrels[qid]):
            lines.append(f"{qid} 0 {docid} {qrels[qid][docid]}\n")
    atomic_write(path, "".join(lines))


def write_run(path, run: dict[str, list[tuple[str, float]]], tag: str, prov=None, query_order=None) -> None:
    """``qid Q0 docid rank score tag`` lines; ``run`` lists are already in rank order."""
    lines = [header_line(prov)]
    for qid in (query_order or sorted(run)):
        for rank, (docid, score) in enumerate(run[qid], 1):
            lines.append(f"{qid} Q0 {docid} {rank} {score:.9g} {tag}\n")
    atomic_write(path, "".join(lines))


def read_run(path) -> tuple[dict[str, list[tuple[str, float]]], str]:
    rows: dict[str, list] = {}
    tag = ""
    with open(path, encoding="utf-8") as fh:
        for line in strip_comments(fh):
            parts = line.split()
            if len(parts) != 6:
                raise ValueError(f"{path}: bad run line {line!r}")
            qid, _, docid, rank, score, tag = parts
            rows.setdefault(qid, []).append((int(rank), docid, float(score)))
    run = {}
    for qid, items in rows.items():
        items.sort(key=lambda r: r[0])
        run[qid] = [(d, s) for _, d, s in items]
    return run, tag


# ---------------------------------------------------------------- metrics

def _grades(ranked, judged):
    return [judged.get(d, 0) for d in ranked]


def average_precision(ranked, judged: dict, cutoff: int = MAP_CUTOFF) -> float:
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    R = sum(1 for g in judged.values() if g > 0)
    if R == 0:
        return 0.0
    hits, total = 0, 0.0
    for i, g in enumerate(_grades(list(ranked)[:cutoff], judged), 1):
        if g > 0:
            hits += 1
            total += hits / i
    return total / R


def precision_at(ranked, judged: dict, k: int = P_CUTOFF) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    return sum(1 for g in _grades(list(ranked)[:k], judged) if g > 0) / k


def ndcg_at(ranked, judged: dict, k: int = NDCG_CUTOFF) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    gains = np.array(_grades(list(ranked)[:k], judged), np.float64)
    disc = 1.0 / np.log2(np.arange(2, k + 2))
    dcg = float(np.sum((2.0 ** gains - 1.0) * disc[:gains.size]))
    ideal = np.sort(np.array([g for g in judged.values() if g > 0], np.float64))[::-1][:k]
    idcg = float(np.sum((2.0 ** ideal - 1.0) * disc[:ideal.size]))
    return dcg / idcg if idcg > 0 else 0.0


def evaluate_run(run, qrels) -> dict[str, dict[str, float]]:
    """Per-query metrics for every query with at least one relevant judgment."""
    out = {}
    for qid in sorted(qrels):
        judged = qrels[qid]
        if not any(g > 0 for g in judged.values()):
            continue
        ranked = [d for d, _ in run.get(qid, [])]
        out[qid] = {
            "map": average_precision(ranked, judged, MAP_CUTOFF),
            "P_20": precision_at(ranked, judged, P_CUTOFF),
            "ndcg_cut_20": ndcg_at(ranked, judged, NDCG_CUTOFF),
        }
    return out


def mean_metrics(per_query) -> dict[str, float]:
    if not per_query:
        return {m: 0.0 for m in METRICS}
    return {m: float(np.mean([v[m] for v in per_query.values()])) for m in METRICS}


# ---------------------------------------------------------------- significance

def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b) by continued fraction."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    # the continued fraction converges fast for x < (a+1)/(a+b+2); use symmetry otherwise
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(ln_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(ln_front) * _betacf(b, a, 1.0 - x) / b


def _betacf(a, b, x, max_iter=10000, eps=1e-16):
    # modified Lentz evaluation
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def student_t_two_tailed(t: float, dof: float) -> float:
    """P(|T| >= |t|) for Student's t with ``dof`` degrees of freedom."""
    return betainc(dof / 2.0, 0.5, dof / (dof + t * t))


def paired_ttest(a, b, num_comparisons: int = 1, alpha: float = 0.05):
    """Two-tailed paired t-test of ``a`` against ``b`` with Bonferroni correction.

    Returns ``(t, p, significant)``. With zero variance of the differences the
    statistic is undefined: p is 1 when the means agree and 0 otherwise.
    """
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two equal-length vectors with at least 2 entries")
    if num_comparisons < 1:
        raise ValueError("num_comparisons must be >= 1")
    d = a - b
    n = d.size
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0, False
        return math.copysign(math.inf, mean), 0.0, True
    t = mean / (sd / math.sqrt(n))
    p = student_t_two_tailed(t, n - 1)
    return t, p, p < alpha / num_comparisons


# ---------------------------------------------------------------- reports

def compare_runs(runs: dict[str, dict], qrels, baseline: str, num_comparisons: int | None = None):
    """Mean metrics per run and t-tests of every other run against ``baseline``."""
    per = {name: evaluate_run(run, qrels) for name, run in runs.items()}
    others = [n for n in runs if n != baseline]
    k = num_comparisons or max(1, len(others))
    qids = sorted(per[baseline])
    sig = {}
    for name in others:
        for m in METRICS:
            x = [per[name][q][m] for q in qids]
            y = [per[baseline][q][m] for q in qids]
            if len(qids) >= 2:
                t, p, s = paired_ttest(x, y, k)
            else:
                t, p, s = 0.0, 1.0, False
            sig[(name, m)] = {"t": t, "p": p, "significant": s,
                              "direction": int(np.sign(np.mean(x) - np.mean(y))) if qids else 0}
    return per, {n: mean_metrics(per[n]) for n in runs}, sig


def format_report(per, means, sig, baseline, prov=None) -> str:
    lines = [header_line(prov), "query_id\trun\tmetric\tvalue\n"]
    for name in per:
        for qid in sorted(per[name]):
            for m in METRICS:
                lines.append(f"{qid}\t{name}\t{m}\t{per[name][qid][m]:.6f}\n")
    lines.append("# summary\n")
    for name in per:
        for m in METRICS:
            lines.append(f"all\t{name}\t{m}\t{means[name][m]:.6f}\n")
    lines.append(f"# significance vs {baseline} (two-tailed paired t-test, Bonferroni)\n")
    for (name, m), r in sig.items():
        mark = ("+" if r["direction"] > 0 else "-") if r["significant"] else "="
        lines.append(f"sig\t{name}\t{m}\tp={r['p']:.6g}\t{mark}\n")
    return "".join(lines)


def pearson(x, y) -> float:
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    xc, yc = x - x.mean(), y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    return float(xc @ yc) / denom if denom > 0 else 0.0


def weight_idf_correlation(table, index):
    """Pearson r between learned raw term weights and IDF over terms with df > 0.

    Returns ``(r, term_ids, weights, idf)``.
    """
    terms = np.flatnonzero(index.df > 0)
    w = table.W[terms]
    idf = index.idf(terms)
    return pearson(w, idf), terms, w, idf


def save_report(path: str | Path, text: str) -> None:
    atomic_write(path, text)
