"""Finite-difference gradient check over a whole ranker (representation + MLP + loss)."""

import numpy as np

from oracles import numeric_gradient, relative_error
from weakrank.rankers import RankerModel, TrainConfig, batch_loss
from weakrank.weaklabel import PairSet, PointSet


def make_data(index, arity, rng, n_queries=4, per_query=3):
    V = len(index.vocab)
    queries = []
    for i in range(n_queries):
        terms = rng.choice(V, size=int(rng.integers(1, 4)), replace=True)
        queries.append(index.make_query(f"q{i}", " ".join(index.vocab.term_of(int(t)) for t in terms)))
    n = n_queries * per_query
    qpos = np.repeat(np.arange(n_queries), per_query)
    d1 = rng.integers(0, index.N, size=n)
    s1 = rng.uniform(0.05, 1.0, size=n)
    if arity == 1:
        return PointSet(queries, qpos, d1, s1, index.doc_ids)
    d2 = (d1 + rng.integers(1, index.N, size=n)) % index.N
    s2 = rng.uniform(0.05, 1.0, size=n)
    s2 = np.where(s2 == s1, s2 / 2, s2)
    return PairSet(queries, qpos, d1, d2, s1, s2, index.doc_ids)


def check_model(index, arch, repr_name, seed=0, dropout=0.0, weighting="learned", h=1e-5):
    """Return the worst relative error over every parameter entry."""
    cfg = TrainConfig(hidden=(6, 5), embed_dim=4, seed=seed, dropout=dropout, weighting=weighting)
    model = RankerModel.create(arch, repr_name, index, cfg)
    rng = np.random.default_rng(seed + 100)
    # move the weights off their init so no gradient is trivially zero
    for p in model.params.values():
        p += rng.normal(0, 0.3, size=p.shape)
    model.mlp.generation += 1
    data = make_data(index, 1 if arch == "score" else 2, rng)

    def run(grads):
        # a freshly seeded rng gives the same dropout masks on every call
        return batch_loss(model, data, train=dropout > 0, rng=np.random.default_rng(seed), grads=grads)

    _, analytic = run(True)
    params = model.params
    numeric = numeric_gradient(lambda: run(False)[0], params, h)
    assert set(analytic) == set(numeric), (sorted(analytic), sorted(numeric))
    worst = 0.0
    for k in numeric:
        worst = max(worst, float(relative_error(analytic[k], numeric[k]).max()))
    return worst
