"""Flat ``key = value`` pipeline configuration.

Lines starting with ``#`` are comments. Relative paths are resolved against
the directory holding the config file. Unknown keys are an error.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .index import BM25Params
from .rankers import TrainConfig
from .synth import SynthConfig


class ConfigError(ValueError):
    pass


PATH_KEYS = ("work_dir", "corpus", "train_queries", "test_queries", "qrels", "sup_queries", "sup_qrels",
             "stopwords", "pretrained_embeddings")


@dataclass
class PipelineConfig:
    work_dir: str = "work"
    corpus: str = "corpus.tsv"
    train_queries: str = "train_queries.tsv"
    test_queries: str = "test_queries.tsv"
    qrels: str = "qrels.txt"
    sup_queries: str = "sup_queries.tsv"
    sup_qrels: str = "sup_qrels.txt"
    stopwords: str = ""

    k1: float = 1.2
    b: float = 0.75
    k3: float = 1000.0

    arch: str = "rankprob"
    repr: str = "embed"
    tag: str = ""

    train_depth: int = 1000
    rerank_depth: int = 2000
    pairs_per_query: int = 1000
    min_hits: int = 10
    train_fraction: float = 0.8

    batch_size: int = 128
    epochs: int = 5
    lr: float = 1e-3
    dropout: float = 0.0
    hidden: str = "128,128"
    embed_dim: int = 100
    margin: float = 1.0
    weighting: str = "learned"
    embedding_source: str = "learned"
    pretrained_embeddings: str = ""
    dense_k: int = 5
    dense_log1p: bool = False
    sparse_log1p: bool = False
    val_every: int = 0

    finetune_epochs: int = 10
    finetune_lr: float = 1e-4
    finetune_depth: int = 1000

    num_comparisons: int = 0

    synth_docs: int = 5000
    synth_train_queries: int = 2000
    synth_test_queries: int = 100
    synth_sup_queries: int = 30
    synth_topics: int = 50

    seed: int = 0

    source: str = ""  # path of the file this config came from
    digest: str = ""  # hash of the values as written, before path resolution

    # ------------------------------------------------------------------
    @property
    def bm25(self) -> BM25Params:
        return BM25Params(self.k1, self.b, self.k3)

    @property
    def model_tag(self) -> str:
        return self.tag or f"{self.arch}-{self.repr}"

    def train_config(self, **over) -> TrainConfig:
        vals = dict(batch_size=self.batch_size, epochs=self.epochs, margin=self.margin, lr=self.lr,
                    dropout=self.dropout, hidden=self.hidden_sizes, embed_dim=self.embed_dim, seed=self.seed,
                    weighting=self.weighting, embedding_source=self.embedding_source,
                    pretrained_embeddings=self.pretrained_embeddings, dense_k=self.dense_k,
                    dense_log1p=self.dense_log1p, sparse_log1p=self.sparse_log1p,
                    val_every=self.val_every)
        vals.update(over)
        return TrainConfig(**vals)

    def synth_config(self) -> SynthConfig:
        return SynthConfig(docs=self.synth_docs, train_queries=self.synth_train_queries,
                           test_queries=self.synth_test_queries, sup_queries=self.synth_sup_queries,
                           topics=self.synth_topics, seed=self.seed)

    @property
    def hidden_sizes(self) -> tuple:
        try:
            return tuple(int(h) for h in str(self.hidden).split(",") if h.strip())
        except ValueError:
            raise ConfigError(f"hidden must be a comma list of integers, got {self.hidden!r}") from None

    def path(self, key: str) -> Path:
        return Path(getattr(self, key))

    def work(self, name: str) -> Path:
        return Path(self.work_dir) / name

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self) if f.name not in ("source", "digest")]

    def hash(self) -> str:
        if not self.digest:
            self.digest = _digest(self)
        return self.digest

    def validate(self) -> None:
        if self.arch not in ("score", "rank", "rankprob"):
            raise ConfigError(f"arch must be score, rank or rankprob, got {self.arch!r}")
        if self.repr not in ("dense", "sparse", "embed"):
            raise ConfigError(f"repr must be dense, sparse or embed, got {self.repr!r}")
        for key in ("train_depth", "rerank_depth", "pairs_per_query", "batch_size", "epochs", "embed_dim"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must be in (0, 1)")
        try:
            self.bm25
            self.train_config()
        except ValueError as e:
            raise ConfigError(str(e)) from None


def _digest(cfg: PipelineConfig) -> str:
    text = "\n".join(f"{k}={v}" for k, v in cfg.items())
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


_FIELDS = {f.name: f for f in fields(PipelineConfig)}


def _convert(name: str, raw: str):
    default = _FIELDS[name].default
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None
    return raw


def parse_config(text: str, base_dir: str | Path = ".", overrides=None) -> PipelineConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS or key in ("source", "digest"):
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, val)
    for key, val in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _convert(key, str(val)) if isinstance(val, str) else val
    cfg = PipelineConfig(**values)
    cfg.digest = _digest(cfg)
    base = Path(base_dir)
    for key in PATH_KEYS:
        v = getattr(cfg, key)
        if v and not Path(v).is_absolute():
            setattr(cfg, key, str(base / v))
    cfg.validate()
    return cfg


def load_config(path: str | Path | None, overrides=None) -> PipelineConfig:
    if path is None:
        return parse_config("", ".", overrides)
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    cfg = parse_config(p.read_text(encoding="utf-8"), p.parent, overrides)
    return dataclasses.replace(cfg, source=str(p))
