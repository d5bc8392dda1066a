"""Score, Rank and RankProb architectures: losses, training, fine-tuning and
inference.

* ``score``    -- point-wise regression of the weak score, linear output
* ``rank``     -- shared point-wise scorer trained with a pair-wise hinge, tanh output
* ``rankprob`` -- network over (q, d1, d2) predicting P(d1 above d2), sigmoid output
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Query
from .index import BM25Params, InvertedIndex, retrieve_top_k_docnos
from .io import atomic_write, header_line
from .nncore import MLP, Adam, load_checkpoint, save_checkpoint
from .represent import EmbedRepresentation, make_representation
from .weaklabel import PairSet, PointSet, pair_probability

log = logging.getLogger(__name__)

ARCHITECTURES = ("score", "rank", "rankprob")
OUTPUT_ACTIVATION = {"score": "linear", "rank": "tanh", "rankprob": "sigmoid"}

# hyperparameter grids searched in the original experiments
BATCH_SIZES = (128, 256, 512)
LEARNING_RATES = (1e-3, 5e-4, 1e-4, 5e-5, 1e-5)
DROPOUT_RATES = (0.0, 0.1, 0.2, 0.5)
HIDDEN_SIZES = (16, 32, 64, 128, 256, 512, 1024)
HIDDEN_LAYERS = (1, 2, 3, 4)
EMBEDDING_SIZES = (100, 300, 500, 1000)

PROB_CLAMP = 1e-12


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 128
    epochs: int = 5
    margin: float = 1.0
    lr: float = 1e-3
    dropout: float = 0.0
    hidden: tuple = (128, 128)
    embed_dim: int = 100
    seed: int = 0
    weighting: str = "learned"
    embedding_source: str = "learned"
    pretrained_embeddings: str = ""
    dense_k: int = 5
    dense_log1p: bool = False
    sparse_log1p: bool = False
    val_every: int = 0  # steps between validation passes; 0 means once per epoch

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def off_grid(self) -> list[str]:
        """Names of settings that fall outside the published search grids."""
        out = []
        if self.batch_size not in BATCH_SIZES:
            out.append("batch_size")
        if self.lr not in LEARNING_RATES:
            out.append("lr")
        if self.dropout not in DROPOUT_RATES:
            out.append("dropout")
        if len(self.hidden) not in HIDDEN_LAYERS or any(h not in HIDDEN_SIZES for h in self.hidden):
            out.append("hidden")
        if self.embed_dim not in EMBEDDING_SIZES:
            out.append("embed_dim")
        return out


class RankerModel:
    def __init__(self, architecture: str, representation, config: TrainConfig):
        if architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {architecture!r}")
        self.architecture = architecture
        self.representation = representation
        self.config = config
        self.arity = 2 if architecture == "rankprob" else 1
        rng = np.random.default_rng([config.seed, 1])
        sizes = [representation.input_dim(self.arity), *config.hidden, 1]
        self.mlp = MLP(sizes, OUTPUT_ACTIVATION[architecture], config.dropout, rng)

    @classmethod
    def create(cls, architecture: str, repr_name: str, index: InvertedIndex, config: TrainConfig):
        rep = make_representation(repr_name, index, dense_k=config.dense_k, dense_log1p=config.dense_log1p,
                                  sparse_log1p=config.sparse_log1p,
                                  embed_dim=config.embed_dim, weighting=config.weighting,
                                  embedding_source=config.embedding_source,
                                  rng=np.random.default_rng([config.seed, 2]))
        if config.embedding_source != "learned" and repr_name == "embed":
            if not config.pretrained_embeddings:
                raise ValueError("pretrained embedding source needs pretrained_embeddings path")
            rep.load_pretrained(config.pretrained_embeddings)
        return cls(architecture, rep, config)

    @property
    def params(self) -> dict:
        out = dict(self.mlp.params)
        out.update(self.representation.params)
        return out

    def state(self) -> dict:
        out = dict(self.mlp.params)
        if isinstance(self.representation, EmbedRepresentation):
            out.update(self.representation.table.state)
        return out

    def load_state(self, arrays: dict) -> None:
        for k, v in arrays.items():
            target = self.state()[k]
            if target.shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {target.shape}")
            target[...] = v
        self.mlp.generation += 1

    def forward(self, qterms, d1, d2=None, train=False, rng=None):
        X, rcache = self.representation.forward(qterms, d1, d2)
        out, mcache = self.mlp.forward(X, train, rng)
        return out, (rcache, mcache)

    def backward(self, cache, dout) -> dict:
        rcache, mcache = cache
        need_input = bool(self.representation.params)
        grads, dX = self.mlp.backward(mcache, dout, input_grad=need_input)
        if need_input:
            grads.update(self.representation.backward(rcache, dX))
        return grads

    def pair_matrix(self, q, candidates, chunk_rows: int = 64) -> np.ndarray:
        """R[i, j] = predicted P(candidate i above candidate j) for a rankprob model.

        The first layer is linear, so its pre-activation splits into a query
        part, a first-document part and a second-document part that are
        computed once per document and summed for every pair.
        """
        if self.architecture != "rankprob":
            raise ValueError("pair_matrix needs a rankprob model")
        cands = np.asarray(candidates, np.int64)
        n = cands.size
        xq, Xa, Xb = self.representation.split(_terms(q), cands, 2)
        W0 = self.mlp.params[self.mlp._w(0)]
        b0 = self.mlp.params[self.mlp._b(0)]
        hq = np.asarray(xq @ W0.T).ravel() + b0
        ha = np.asarray(Xa @ W0.T)
        hb = np.asarray(Xb @ W0.T)
        R = np.empty((n, n))
        for lo in range(0, n, chunk_rows):
            hi = min(n, lo + chunk_rows)
            Z0 = (hq + ha[lo:hi, None, :] + hb[None, :, :]).reshape(-1, W0.shape[0])
            out, _ = self.mlp.forward_from_first(Z0)
            R[lo:hi] = out.reshape(hi - lo, n)
        return R

    def score_docs(self, q, candidates) -> np.ndarray:
        """Point-wise inference scores for score/rank models."""
        if self.architecture == "rankprob":
            raise ValueError("rankprob models score pairs; use rerank_pairwise")
        cands = np.asarray(candidates, np.int64)
        terms = _terms(q)
        out, _ = self.forward([terms] * cands.size, cands)
        return out


def _terms(q):
    return q.tokens if isinstance(q, Query) else np.asarray(q, np.int64)


# ---------------------------------------------------------------- losses

def mse_loss(pred, target):
    pred = np.asarray(pred, np.float64)
    if pred.size == 0:
        raise ValueError("empty batch")
    diff = pred - np.asarray(target, np.float64)
    return float(np.mean(diff * diff)), 2.0 * diff / pred.size


def hinge_loss(pred1, pred2, s1, s2, margin=1.0):
    """Mean of ``max(0, margin - sign(s1 - s2) * (pred1 - pred2))``."""
    pred1 = np.asarray(pred1, np.float64)
    if pred1.size == 0:
        raise ValueError("empty batch")
    sign = np.sign(np.asarray(s1, np.float64) - np.asarray(s2, np.float64))
    if np.any(sign == 0):
        raise ValueError("hinge loss needs s1 != s2 in every instance")
    viol = margin - sign * (pred1 - np.asarray(pred2, np.float64))
    active = viol > 0
    B = pred1.size
    d1 = np.where(active, -sign, 0.0) / B
    return float(np.mean(np.where(active, viol, 0.0))), d1, -d1


def cross_entropy_loss(r, p):
    """Binary cross entropy of predicted probabilities ``r`` against targets ``p``."""
    r = np.asarray(r, np.float64)
    if r.size == 0:
        raise ValueError("empty batch")
    p = np.asarray(p, np.float64)
    rc = np.clip(r, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = -np.mean(p * np.log(rc) + (1.0 - p) * np.log(1.0 - rc))
    inside = (r > PROB_CLAMP) & (r < 1.0 - PROB_CLAMP)
    dr = np.where(inside, -(p / rc - (1.0 - p) / (1.0 - rc)), 0.0) / r.size
    return float(loss), dr


def batch_loss(model: RankerModel, data, idx=None, train=False, rng=None, grads=True, margin=None):
    """Loss of ``model`` on ``data[idx]`` and, optionally, parameter gradients."""
    batch = data if idx is None else data.subset(idx)
    if len(batch) == 0:
        raise ValueError("empty batch")
    qterms = [batch.queries[i].tokens for i in batch.qpos]
    arch = model.architecture
    if arch == "score":
        if not isinstance(batch, PointSet):
            raise TypeError("score model trains on point-wise instances")
        pred, cache = model.forward(qterms, batch.doc, train=train, rng=rng)
        loss, dpred = mse_loss(pred, batch.s)
    elif arch == "rank":
        if not isinstance(batch, PairSet):
            raise TypeError("rank model trains on pair-wise instances")
        B = len(batch)
        pred, cache = model.forward(qterms + qterms, np.concatenate([batch.doc1, batch.doc2]),
                                    train=train, rng=rng)
        loss, g1, g2 = hinge_loss(pred[:B], pred[B:], batch.s1, batch.s2,
                                 model.config.margin if margin is None else margin)
        dpred = np.concatenate([g1, g2])
    else:
        if not isinstance(batch, PairSet):
            raise TypeError("rankprob model trains on pair-wise instances")
        pred, cache = model.forward(qterms, batch.doc1, batch.doc2, train=train, rng=rng)
        loss, dpred = cross_entropy_loss(pred, pair_probability(batch.s1, batch.s2))
    if not grads:
        return loss, None
    return loss, model.backward(cache, dpred)


def loss_score(batch: PointSet, model: RankerModel) -> float:
    if model.architecture != "score":
        raise ValueError("loss_score needs a score model")
    return batch_loss(model, batch, grads=False)[0]


def loss_rank(batch: PairSet, model: RankerModel, margin: float | None = None) -> float:
    if model.architecture != "rank":
        raise ValueError("loss_rank needs a rank model")
    return batch_loss(model, batch, grads=False, margin=margin)[0]


def loss_rankprob(batch: PairSet, model: RankerModel) -> float:
    if model.architecture != "rankprob":
        raise ValueError("loss_rankprob needs a rankprob model")
    return batch_loss(model, batch, grads=False)[0]


def dataset_loss(model: RankerModel, data, batch_size=1024) -> float:
    total, n = 0.0, len(data)
    for lo in range(0, n, batch_size):
        idx = np.arange(lo, min(n, lo + batch_size))
        total += batch_loss(model, data, idx, grads=False)[0] * idx.size
    return total / n


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    model: RankerModel
    curve: list = field(default_factory=list)  # (step, epoch, train_loss, val_loss or nan)
    best_val: float = math.inf
    best_step: int = 0


def drop_invalid(model: RankerModel, data):
    """Remove instances the representation cannot encode (e.g. empty fields)."""
    qterms = [data.queries[i].tokens for i in data.qpos]
    if isinstance(data, PointSet):
        ok = model.representation.valid(qterms, data.doc)
    elif model.architecture == "rank":
        ok = model.representation.valid(qterms, data.doc1) & model.representation.valid(qterms, data.doc2)
    else:
        ok = model.representation.valid(qterms, data.doc1, data.doc2)
    if not ok.all():
        log.warning("skipping %d instances with empty fields", int((~ok).sum()))
        return data.subset(np.flatnonzero(ok))
    return data


def train(model: RankerModel, train_set, val_set=None, config: TrainConfig | None = None,
          optimizer: Adam | None = None) -> TrainResult:
    """Mini-batch Adam training with seeded shuffling.

    Validation loss is computed every ``val_every`` steps (and at each epoch
    end); the parameters with the lowest validation loss are restored at the
    end. Without a validation set the final parameters are kept.
    """
    cfg = config or model.config
    train_set = drop_invalid(model, train_set)
    if val_set is not None:
        val_set = drop_invalid(model, val_set)
        if len(val_set) == 0:
            val_set = None
    n = len(train_set)
    if n == 0:
        raise ValueError("no training instances")
    opt = optimizer or Adam(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 3])
    result = TrainResult(model)
    best_state = None
    step = 0

    def validate():
        nonlocal best_state
        v = dataset_loss(model, val_set)
        if not math.isfinite(v):
            raise TrainingDiverged(f"validation loss became {v} at step {step}")
        if v < result.best_val:
            result.best_val, result.best_step = v, step
            best_state = {k: a.copy() for k, a in model.state().items()}
        return v

    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            loss, grads = batch_loss(model, train_set, idx, train=True, rng=rng)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(
                    f"non-finite loss/gradient at epoch {epoch} step {step + 1} (loss={loss}); "
                    f"try a lower learning rate (lr={cfg.lr})")
            opt.step(model.params, grads)
            model.mlp.generation += 1
            step += 1
            val = math.nan
            end_of_epoch = lo + cfg.batch_size >= n
            if val_set is not None and (end_of_epoch or (cfg.val_every and step % cfg.val_every == 0)):
                val = validate()
            result.curve.append((step, epoch, loss, val))
        log.info("epoch %d: mean train loss %.6f", epoch,
                 np.mean([c[2] for c in result.curve if c[1] == epoch]))
    if best_state is not None:
        model.load_state(best_state)
    return result


def write_loss_curve(path, curve, prov=None) -> None:
    lines = [header_line(prov), "step,epoch,train_loss,val_loss\n"]
    for step, epoch, tr, va in curve:
        lines.append(f"{step},{epoch},{tr:.9g},{'' if math.isnan(va) else format(va, '.9g')}\n")
    atomic_write(path, "".join(lines))


def read_loss_curve(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("step"):
                continue
            step, epoch, tr, va = line.rstrip("\n").split(",")
            out.append((int(step), int(epoch), float(tr), float(va) if va else math.nan))
    return out


# ---------------------------------------------------------------- supervised fine-tuning

def supervised_instances(model: RankerModel, qrels: dict, index: InvertedIndex, queries, seed=0,
                         depth=1000, params: BM25Params | None = None):
    """Binary-labelled instances from relevance judgments.

    For every query with m relevant documents, m non-relevant documents are
    sampled, preferring the BM25 candidates. Point-wise sets get one
    ``(q, d, label)`` row per document; pair-wise sets get each
    (relevant, negative) pair in both orders.
    """
    params = params or BM25Params()
    qpos, pos, neg = [], [], []
    for i, q in enumerate(queries):
        judged = qrels.get(q.query_id, {})
        rel = np.array(sorted(index.docno(d) for d, g in judged.items() if g > 0 and d in index._docno), np.int64)
        if rel.size == 0:
            log.info("query %s has no relevant documents, skipped", q.query_id)
            continue
        rng = np.random.default_rng([seed, i])
        cands, _ = retrieve_top_k_docnos(index, params, q, depth)
        pool = np.setdiff1d(cands, rel, assume_unique=False)
        if pool.size < rel.size:
            pool = np.setdiff1d(np.arange(index.N), rel)
        pool = np.sort(pool)
        negs = rng.choice(pool, size=rel.size, replace=False)
        qpos.append(np.full(rel.size, i, np.int64))
        pos.append(rel)
        neg.append(negs)
    if not qpos:
        raise ValueError("no query has relevant documents")
    qpos, pos, neg = map(np.concatenate, (qpos, pos, neg))
    ones, zeros = np.ones(pos.size), np.zeros(pos.size)
    if model.architecture == "score":
        return PointSet(list(queries), np.concatenate([qpos, qpos]), np.concatenate([pos, neg]),
                        np.concatenate([ones, zeros]), index.doc_ids)
    return PairSet(list(queries), np.concatenate([qpos, qpos]), np.concatenate([pos, neg]),
                   np.concatenate([neg, pos]), np.concatenate([ones, zeros]), np.concatenate([zeros, ones]),
                   index.doc_ids)


def fine_tune(model: RankerModel, qrels: dict, index: InvertedIndex, queries, seed=0,
              config: TrainConfig | None = None, depth=1000, params=None) -> TrainResult:
    """Continue training ``model`` with the same loss on judged queries.

    A freshly initialized model gives the supervised-only baseline.
    """
    data = supervised_instances(model, qrels, index, queries, seed, depth, params)
    return train(model, data, None, config or model.config)


# ---------------------------------------------------------------- inference

def score_pointwise(model: RankerModel, q, d: int) -> float:
    return float(model.score_docs(q, [d])[0])


def _order(scores, n):
    # stable on candidate position, so ties keep the incoming (BM25) order
    return np.lexsort((np.arange(n), -np.asarray(scores)))


def rerank_pointwise(model: RankerModel, q, candidates):
    cands = np.asarray(candidates, np.int64)
    if cands.size == 0:
        return cands, np.zeros(0)
    scores = model.score_docs(q, cands)
    order = _order(scores, cands.size)
    return cands[order], scores[order]


def pairwise_scores(R: np.ndarray) -> np.ndarray:
    """Average of each row of ``R`` over all other candidates."""
    n = R.shape[0]
    off = ~np.eye(n, dtype=bool)
    return np.array([R[i, off[i]].sum() for i in range(n)]) / (n - 1)


def rerank_pairwise(model, q, candidates):
    """Rank candidates by their mean predicted win probability against all others."""
    cands = np.asarray(candidates, np.int64)
    n = cands.size
    if n < 2:
        return cands, np.ones(n)
    scores = pairwise_scores(model.pair_matrix(q, cands))
    order = _order(scores, n)
    return cands[order], scores[order]


def rerank(model: RankerModel, q, candidates):
    if model.architecture == "rankprob":
        return rerank_pairwise(model, q, candidates)
    return rerank_pointwise(model, q, candidates)


# ---------------------------------------------------------------- checkpoints

def save_model(path, model: RankerModel, prov: dict | None = None) -> None:
    rep = model.representation
    header = {
        "architecture": model.architecture,
        "representation": rep.name,
        "layer_sizes": model.mlp.sizes,
        "output_activation": model.mlp.output_activation,
        "vocab_size": len(rep.index.vocab),
        "embed_dim": getattr(rep, "dim", 0),
        "config": _config_dict(model.config),
        "provenance": prov or {},
    }
    save_checkpoint(path, header, model.state())
    sidecar = Path(str(path) + ".json")
    atomic_write(sidecar, json.dumps(_config_dict(model.config), indent=2, sort_keys=True) + "\n")


def load_model(path, index: InvertedIndex) -> RankerModel:
    header, arrays = load_checkpoint(path)
    cfg = TrainConfig(**header["config"])
    if header["vocab_size"] != len(index.vocab):
        raise ValueError("checkpoint vocabulary size does not match the index")
    # pretrained vectors are part of the saved state; no need to reread the file
    cfg_build = TrainConfig(**{**header["config"], "embedding_source": "learned"})
    model = RankerModel.create(header["architecture"], header["representation"], index, cfg_build)
    if isinstance(model.representation, EmbedRepresentation):
        model.representation.table.train_embeddings = cfg.embedding_source != "pretrained-frozen"
        model.representation.source = cfg.embedding_source
    model.config = cfg
    model.load_state(arrays)
    return model


def _config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d
