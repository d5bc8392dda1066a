"""Command-line pipeline: synth -> index -> generate -> train -> rerank -> evaluate -> analyze.

Every stage reads the same flat config file; stage outputs go to ``work_dir``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, PipelineConfig, load_config
from .corpus import filter_training_queries, load_corpus, load_stopwords, read_tsv, split_train_validation
from .evaluation import compare_runs, format_report, read_qrels, read_run, save_report, weight_idf_correlation, \
    write_run
from .index import InvertedIndex, build_index, retrieve_top_k_docnos
from .io import atomic_write, header_line, provenance
from .rankers import RankerModel, TrainingDiverged, fine_tune, load_model, rerank, save_model, train, \
    write_loss_curve
from .represent import EmbedRepresentation
from .synth import generate as synth_generate, write_collection
from .weaklabel import generate_pairwise, generate_pointwise, read_pairwise, read_pointwise, write_pairwise, \
    write_pointwise

log = logging.getLogger("weakrank")

EXIT_CONFIG = 2
EXIT_CODES = {"synth": 10, "index": 11, "generate": 12, "train": 13, "finetune": 14, "rerank": 15,
              "evaluate": 16, "analyze": 17}

INDEX_FILE = "index.wrix"
TRAIN_Q = "queries.train.tsv"
VAL_Q = "queries.val.tsv"


class StageError(RuntimeError):
    pass


def _prov(cfg: PipelineConfig) -> dict:
    return provenance(cfg.hash(), seed=cfg.seed)


def _need(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise StageError(f"required input {p} does not exist")
    return p


def _load_index(cfg) -> InvertedIndex:
    return InvertedIndex.load(_need(cfg.work(INDEX_FILE)))


def _load_queries(index, path):
    return [index.make_query(qid, text) for qid, text in read_tsv(_need(path))]


def _write_queries(path, queries, prov):
    atomic_write(path, header_line(prov) + "".join(f"{q.query_id}\t{q.text}\n" for q in queries))


# ---------------------------------------------------------------- stages

def cmd_synth(cfg: PipelineConfig) -> dict:
    col = synth_generate(cfg.synth_config())
    paths = {k: cfg.path(k) for k in ("corpus", "train_queries", "test_queries", "qrels", "sup_queries",
                                      "sup_qrels")}
    paths["synonyms"] = cfg.work("synonyms.tsv")
    write_collection(col, paths, _prov(cfg))
    log.info("synthetic collection: %d docs, %d raw training queries, %d test queries",
             len(col.docs), len(col.train_queries), len(col.test_queries))
    return paths


def cmd_index(cfg: PipelineConfig) -> Path:
    stop = load_stopwords(_need(cfg.stopwords)) if cfg.stopwords else None
    corpus = load_corpus(_need(cfg.corpus), stop)
    if not corpus.documents:
        raise StageError("corpus is empty")
    index = build_index(corpus, meta=_prov(cfg))
    out = cfg.work(INDEX_FILE)
    index.save(out)
    log.info("indexed %d documents, %d terms, avg length %.1f", index.N, len(index.vocab), index.avg_dl)
    return out


def cmd_generate(cfg: PipelineConfig) -> dict:
    index = _load_index(cfg)
    prov = _prov(cfg)
    exclude = []
    for key in ("test_queries", "sup_queries"):
        p = cfg.path(key)
        if p.exists():
            exclude.extend(text for _, text in read_tsv(p))
    raw = read_tsv(_need(cfg.train_queries))
    queries = filter_training_queries(raw, index, cfg.min_hits, exclude)
    if len(queries) < 2:
        raise StageError(f"only {len(queries)} training queries survive filtering")
    tr, va = split_train_validation(queries, cfg.train_fraction, cfg.seed)
    out = {"train_queries": cfg.work(TRAIN_Q), "val_queries": cfg.work(VAL_Q)}
    _write_queries(out["train_queries"], tr, prov)
    _write_queries(out["val_queries"], va, prov)
    for name, qs, seed in (("train", tr, cfg.seed), ("val", va, cfg.seed + 1)):
        pts = generate_pointwise(index, cfg.bm25, qs, cfg.train_depth)
        prs = generate_pairwise(index, cfg.bm25, qs, cfg.train_depth, cfg.pairs_per_query, seed)
        out[f"{name}_point"] = cfg.work(f"{name}.point.tsv")
        out[f"{name}_pair"] = cfg.work(f"{name}.pair.tsv")
        write_pointwise(out[f"{name}_point"], pts, prov)
        write_pairwise(out[f"{name}_pair"], prs, prov)
        log.info("%s: %d queries, %d point-wise, %d pair-wise instances", name, len(qs), len(pts), len(prs))
    return out


def _training_sets(cfg, index, arity):
    tr = _load_queries(index, cfg.work(TRAIN_Q))
    va = _load_queries(index, cfg.work(VAL_Q))
    if arity == "point":
        return (read_pointwise(_need(cfg.work("train.point.tsv")), tr, index),
                read_pointwise(_need(cfg.work("val.point.tsv")), va, index))
    return (read_pairwise(_need(cfg.work("train.pair.tsv")), tr, index),
            read_pairwise(_need(cfg.work("val.pair.tsv")), va, index))


def cmd_train(cfg: PipelineConfig) -> dict:
    index = _load_index(cfg)
    tcfg = cfg.train_config()
    off = tcfg.off_grid()
    if off:
        log.warning("settings outside the published search grid: %s", ", ".join(off))
    model = RankerModel.create(cfg.arch, cfg.repr, index, tcfg)
    train_set, val_set = _training_sets(cfg, index, "point" if cfg.arch == "score" else "pair")
    result = train(model, train_set, val_set, tcfg)
    tag = cfg.model_tag
    out = {"checkpoint": cfg.work(f"model.{tag}.ckpt"), "loss": cfg.work(f"loss.{tag}.csv")}
    prov = _prov(cfg)
    save_model(out["checkpoint"], model, prov)
    write_loss_curve(out["loss"], result.curve, prov)
    log.info("trained %s: best validation loss %.6f at step %d", tag, result.best_val, result.best_step)
    return out


def cmd_finetune(cfg: PipelineConfig, init: str | None = None) -> dict:
    index = _load_index(cfg)
    queries = _load_queries(index, cfg.sup_queries)
    qrels = read_qrels(_need(cfg.sup_qrels))
    tcfg = cfg.train_config(epochs=cfg.finetune_epochs, lr=cfg.finetune_lr)
    if init:
        model = load_model(_need(init), index)
        model.config = cfg.train_config(epochs=cfg.finetune_epochs, lr=cfg.finetune_lr,
                                         **{k: getattr(model.config, k) for k in
                                            ("hidden", "embed_dim", "weighting", "embedding_source",
                                             "dense_k", "dense_log1p", "sparse_log1p")})
        tcfg = model.config
    else:
        model = RankerModel.create(cfg.arch, cfg.repr, index, tcfg)
    result = fine_tune(model, qrels, index, queries, cfg.seed, tcfg, cfg.finetune_depth, cfg.bm25)
    tag = cfg.model_tag
    out = {"checkpoint": cfg.work(f"model.{tag}.ckpt"), "loss": cfg.work(f"loss.{tag}.csv")}
    prov = _prov(cfg)
    save_model(out["checkpoint"], model, prov)
    write_loss_curve(out["loss"], result.curve, prov)
    return out


def cmd_rerank(cfg: PipelineConfig, checkpoint: str | None = None) -> dict:
    index = _load_index(cfg)
    tag = cfg.model_tag
    ckpt = _need(checkpoint or cfg.work(f"model.{tag}.ckpt"))
    model = load_model(ckpt, index)
    queries = _load_queries(index, cfg.test_queries)
    base, ranked = {}, {}
    for q in queries:
        docs, scores = retrieve_top_k_docnos(index, cfg.bm25, q, cfg.rerank_depth)
        base[q.query_id] = [(index.doc_ids[d], float(s)) for d, s in zip(docs, scores)]
        if docs.size == 0:
            ranked[q.query_id] = []
            continue
        order, new_scores = rerank(model, q, docs)
        ranked[q.query_id] = [(index.doc_ids[d], float(s)) for d, s in zip(order, new_scores)]
    qorder = [q.query_id for q in queries]
    prov = _prov(cfg)
    out = {"bm25": cfg.work("run.bm25.txt"), "model": cfg.work(f"run.{tag}.txt")}
    write_run(out["bm25"], base, "bm25", prov, qorder)
    write_run(out["model"], ranked, tag, prov, qorder)
    return out


def cmd_evaluate(cfg: PipelineConfig, runs, baseline: str | None = None, output: str | None = None) -> dict:
    qrels = read_qrels(_need(cfg.qrels))
    baseline = baseline or str(cfg.work("run.bm25.txt"))
    paths = [baseline] + [r for r in runs if str(r) != str(baseline)]
    loaded = {}
    for p in paths:
        run, _ = read_run(_need(p))
        loaded[Path(p).stem] = run
    base_name = Path(baseline).stem
    k = cfg.num_comparisons or None
    per, means, sig = compare_runs(loaded, qrels, base_name, k)
    report = format_report(per, means, sig, base_name, _prov(cfg))
    out = Path(output) if output else cfg.work("report.tsv")
    save_report(out, report)
    for name in loaded:
        m = means[name]
        flag = ""
        if name != base_name:
            s = sig[(name, "map")]
            flag = "  " + ("=" if not s["significant"] else "+" if s["direction"] > 0 else "-")
        print(f"{name:32s} MAP {m['map']:.4f}  P@20 {m['P_20']:.4f}  nDCG@20 {m['ndcg_cut_20']:.4f}{flag}")
    return {"report": out, "means": means, "significance": sig, "per_query": per}


def cmd_analyze(cfg: PipelineConfig, checkpoint: str | None = None) -> dict:
    index = _load_index(cfg)
    tag = cfg.model_tag
    model = load_model(_need(checkpoint or cfg.work(f"model.{tag}.ckpt")), index)
    rep = model.representation
    if not isinstance(rep, EmbedRepresentation):
        raise StageError("weight analysis needs an embed-representation model")
    if rep.table.weighting != "learned":
        log.warning("model uses %s weighting; raw weights were not trained", rep.table.weighting)
    r, terms, w, idf = weight_idf_correlation(rep.table, index)
    lines = [header_line(_prov(cfg)), f"# pearson_r={r:.6f} terms={terms.size}\n", "term,weight,idf\n"]
    for t, a, b in zip(terms, w, idf):
        lines.append(f"{index.vocab.term_of(int(t))},{a:.9g},{b:.9g}\n")
    out = cfg.work(f"weights_idf.{tag}.csv")
    atomic_write(out, "".join(lines))
    print(f"pearson r(learned weight, idf) = {r:.4f} over {terms.size} terms")
    return {"csv": out, "pearson_r": r}


# ---------------------------------------------------------------- entry point

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--arch", choices=("score", "rank", "rankprob"))
    common.add_argument("--repr", choices=("dense", "sparse", "embed"))
    common.add_argument("--tag", help="name used for model/run/loss files (default ARCH-REPR)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="weakrank", description=__doc__)
    p.add_argument("--version", action="version", version=f"weakrank {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic corpus, queries and qrels")
    sub.add_parser("index", parents=[common], help="build the inverted index")
    sub.add_parser("generate", parents=[common], help="filter training queries, write weak labels")
    sub.add_parser("train", parents=[common], help="train a ranker on weak labels")
    ft = sub.add_parser("finetune", parents=[common], help="fine-tune on judged queries")
    ft.add_argument("--init", help="checkpoint to start from (omit for supervised-only training)")
    rr = sub.add_parser("rerank", parents=[common], help="re-rank BM25 candidates of the test queries")
    rr.add_argument("--checkpoint")
    ev = sub.add_parser("evaluate", parents=[common], help="MAP / P@20 / nDCG@20 and t-tests")
    ev.add_argument("runs", nargs="*")
    ev.add_argument("--baseline", help="baseline run (default: work_dir/run.bm25.txt)")
    ev.add_argument("--output")
    an = sub.add_parser("analyze", parents=[common], help="learned term weight vs IDF correlation")
    an.add_argument("--checkpoint")
    return p


def _overrides(args) -> dict:
    over = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip()] = v.strip()
    for key in ("seed", "arch", "repr", "tag"):
        val = getattr(args, key)
        if val is not None:
            over[key] = str(val)
    return over


def run(argv=None) -> dict:
    """Parse ``argv`` and run one stage; raises on failure (see ``main``)."""
    args = _parser().parse_args(argv)
    cfg = load_config(args.config, _overrides(args))
    cmd = args.command
    if cmd == "synth":
        return cmd_synth(cfg)
    if cmd == "index":
        return {"index": cmd_index(cfg)}
    if cmd == "generate":
        return cmd_generate(cfg)
    if cmd == "train":
        return cmd_train(cfg)
    if cmd == "finetune":
        return cmd_finetune(cfg, args.init)
    if cmd == "rerank":
        return cmd_rerank(cfg, args.checkpoint)
    if cmd == "evaluate":
        return cmd_evaluate(cfg, args.runs, args.baseline, args.output)
    return cmd_analyze(cfg, args.checkpoint)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    verbose = "-v" in argv or "--verbose" in argv
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cmd = next((a for a in argv if a in EXIT_CODES), None)
    try:
        run(argv)
    except ConfigError as e:
        print(f"weakrank: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageError, TrainingDiverged, OSError, ValueError, KeyError) as e:
        print(f"weakrank {cmd}: {e}", file=sys.stderr)
        return EXIT_CODES.get(cmd, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
