import os

import pytest

from weakrank import cli
from weakrank.config import ConfigError, load_config, parse_config

TINY = """\
work_dir = work
synth_docs = 300
synth_train_queries = 150
synth_test_queries = 10
synth_sup_queries = 6
synth_topics = 6
train_depth = 30
rerank_depth = 40
pairs_per_query = 8
min_hits = 5
epochs = 1
embed_dim = 8
hidden = 8
finetune_epochs = 1
finetune_depth = 30
seed = 5
"""


@pytest.fixture
def conf(tmp_path):
    p = tmp_path / "run.conf"
    p.write_text(TINY)
    return p


def test_config_parsing(tmp_path):
    cfg = parse_config("# c\nk1 = 0.9\narch = rank\ndense_log1p = yes\n", tmp_path)
    assert cfg.k1 == 0.9 and cfg.arch == "rank" and cfg.dense_log1p is True
    assert cfg.corpus == str(tmp_path / "corpus.tsv")
    with pytest.raises(ConfigError):
        parse_config("nonsense = 1\n")
    with pytest.raises(ConfigError):
        parse_config("epochs = many\n")
    with pytest.raises(ConfigError):
        parse_config("arch = deep\n")


def test_defaults():
    cfg = parse_config("")
    assert cfg.rerank_depth == 2000 and cfg.train_depth == 1000
    assert (cfg.k1, cfg.b) == (1.2, 0.75)


def test_hash_independent_of_location(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    for d in ("a", "b"):
        (tmp_path / d / "x.conf").write_text(TINY)
    assert load_config(tmp_path / "a" / "x.conf").hash() == load_config(tmp_path / "b" / "x.conf").hash()
    assert load_config(tmp_path / "a" / "x.conf", {"seed": "6"}).hash() != load_config(tmp_path / "a" / "x.conf").hash()


def test_exit_codes(conf, tmp_path, capsys):
    assert cli.main(["index", "--config", str(tmp_path / "missing.conf")]) == cli.EXIT_CONFIG
    assert cli.main(["index", "--config", str(conf), "--set", "bogus=1"]) == cli.EXIT_CONFIG
    # inputs not there yet: each stage fails with its own code
    assert cli.main(["index", "--config", str(conf)]) == cli.EXIT_CODES["index"]
    assert cli.main(["generate", "--config", str(conf)]) == cli.EXIT_CODES["generate"]
    assert cli.main(["train", "--config", str(conf)]) == cli.EXIT_CODES["train"]
    assert cli.main(["rerank", "--config", str(conf)]) == cli.EXIT_CODES["rerank"]
    assert cli.main(["evaluate", "--config", str(conf)]) == cli.EXIT_CODES["evaluate"]
    assert cli.main(["analyze", "--config", str(conf)]) == cli.EXIT_CODES["analyze"]
    assert cli.main(["finetune", "--config", str(conf)]) == cli.EXIT_CODES["finetune"]
    assert len(set(cli.EXIT_CODES.values())) == len(cli.EXIT_CODES)


def test_pipeline(conf, tmp_path, capsys):
    c = str(conf)
    for stage in ("synth", "index", "generate"):
        assert cli.main([stage, "--config", c]) == 0
    work = tmp_path / "work"
    inputs = {p: p.read_bytes() for p in tmp_path.glob("*.tsv")}
    for arch in ("score", "rank", "rankprob"):
        assert cli.main(["train", "--config", c, "--arch", arch, "--repr", "embed"]) == 0
        assert cli.main(["rerank", "--config", c, "--arch", arch, "--repr", "embed"]) == 0
    runs = [str(work / f"run.{a}-embed.txt") for a in ("score", "rank", "rankprob")]
    assert cli.main(["evaluate", "--config", c, *runs]) == 0
    out = capsys.readouterr().out
    assert "run.bm25" in out and "run.rankprob-embed" in out
    assert cli.main(["analyze", "--config", c]) == 0
    assert cli.main(["finetune", "--config", c, "--tag", "ft", "--init", str(work / "model.rankprob-embed.ckpt")]) == 0
    # analysis of a non-embed model is a stage error
    assert cli.main(["train", "--config", c, "--arch", "score", "--repr", "dense"]) == 0
    assert cli.main(["analyze", "--config", c, "--arch", "score", "--repr", "dense"]) == cli.EXIT_CODES["analyze"]

    # every text output starts with the provenance header
    for p in list(work.glob("*.txt")) + list(work.glob("*.tsv")) + list(work.glob("*.csv")):
        first = p.read_text().splitlines()[0]
        assert first.startswith("# tool=weakrank version="), p
        assert "config_sha256=" in first and "seed=5" in first
    assert (work / "weights_idf.rankprob-embed.csv").read_text().splitlines()[1].startswith("# pearson_r=")
    # no temp files left behind, inputs untouched
    assert not [p for p in work.iterdir() if p.name.endswith(".tmp")]
    assert all(p.read_bytes() == b for p, b in inputs.items())
    # seed override shows up in the header
    assert cli.main(["rerank", "--config", c, "--seed", "9", "--arch", "rank", "--repr", "embed"]) == 0
    assert "seed=9" in (work / "run.rank-embed.txt").read_text().splitlines()[0]


def test_atomic_write_leaves_old_file_on_failure(tmp_path, monkeypatch):
    from weakrank import io
    target = tmp_path / "f.txt"
    io.atomic_write(target, "old")

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        io.atomic_write(target, "new")
    assert target.read_text() == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["f.txt"]
