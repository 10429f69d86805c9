import json
import math

import numpy as np
import pytest

from nndwl.cli import main
from nndwl.corpus import SOURCE, TARGET, Vocabulary
from nndwl.network import ModelMetadata, load_model, save_model, zero_model

from synthetic import lexicon_corpus, write_corpus

FAST = ["--hidden", "8", "--epochs", "2"]


@pytest.fixture
def workdir(tmp_path):
    train, _ = lexicon_corpus(120, seed=1)
    valid, _ = lexicon_corpus(30, seed=2)
    write_corpus(train, tmp_path / "train.src", tmp_path / "train.tgt")
    write_corpus(valid, tmp_path / "valid.src", tmp_path / "valid.tgt")
    return tmp_path


def build_vocab(d, *extra):
    return main(["build-vocab", "--src", str(d / "train.src"), "--tgt", str(d / "train.tgt"),
                 "--out-dir", str(d / "vocab"), *extra])


def train_model(d, model="model.nndwl", *extra):
    return main(["train", "--src", str(d / "train.src"), "--tgt", str(d / "train.tgt"),
                 "--valid-src", str(d / "valid.src"), "--valid-tgt", str(d / "valid.tgt"),
                 "--src-vocab", str(d / "vocab/source.vocab"),
                 "--tgt-vocab", str(d / "vocab/target.vocab"), "--model", str(d / model), *extra])


def model_args(d, model="model.nndwl"):
    return ["--model", str(d / model), "--src-vocab", str(d / "vocab/source.vocab"),
            "--tgt-vocab", str(d / "vocab/target.vocab")]


class TestBuildVocab:
    def test_writes_vocabs_and_stats(self, workdir, capsys):
        assert build_vocab(workdir, "--src-cutoff", "20", "--bigrams", "30", "--trigrams", "10") == 0
        out = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
        assert out["sentences"] == "120"
        sv = Vocabulary.load(workdir / "vocab/source.vocab", side=SOURCE)
        assert len(sv) == 1 + 20 + 30 + 10 == int(out["source_vocab"])
        manifest = json.loads((workdir / "vocab/build-vocab.manifest.json").read_text())
        assert manifest["command"] == "build-vocab"
        assert manifest["config"]["bigrams"] == 30
        assert set(manifest["inputs"]) == {"src", "tgt"}

    def test_zero_cutoff_is_unlimited(self, workdir):
        assert build_vocab(workdir, "--src-cutoff", "0") == 0
        assert len(Vocabulary.load(workdir / "vocab/source.vocab")) == 51

    def test_missing_corpus(self, tmp_path):
        assert main(["build-vocab", "--src", str(tmp_path / "x"), "--tgt", str(tmp_path / "y"),
                     "--out-dir", str(tmp_path)]) == 2

    def test_line_mismatch(self, tmp_path):
        (tmp_path / "s").write_text("a\n")
        (tmp_path / "t").write_text("x\ny\n")
        assert main(["build-vocab", "--src", str(tmp_path / "s"), "--tgt", str(tmp_path / "t"),
                     "--out-dir", str(tmp_path)]) == 2


class TestTrain:
    def test_train_writes_artifacts(self, workdir, capsys):
        build_vocab(workdir)
        capsys.readouterr()
        assert train_model(workdir, "model.nndwl", *FAST) == 0
        m = load_model(workdir / "model.nndwl")
        assert m.dims == [51, 8, 51]
        log = (workdir / "model.nndwl.log").read_text().splitlines()
        assert len(log) == 2 and all(len(l.split("\t")) == 4 for l in log)
        assert capsys.readouterr().out.splitlines() == log
        manifest = json.loads((workdir / "model.nndwl.manifest.json").read_text())
        assert manifest["config"]["resolved_config"]["hidden_dims"] == [8]
        assert manifest["config"]["resolved_config"]["learning_rate"] == 0.02
        assert manifest["seed"] == 0
        sv = Vocabulary.load(workdir / "vocab/source.vocab")
        assert m.metadata.source_vocab_sha256 == sv.content_hash()

    def test_deterministic(self, workdir):
        build_vocab(workdir)
        train_model(workdir, "a.nndwl", *FAST, "--seed", "3")
        train_model(workdir, "b.nndwl", *FAST, "--seed", "3")
        assert (workdir / "a.nndwl").read_bytes() == (workdir / "b.nndwl").read_bytes()

    def test_maxent_and_simnndwl(self, workdir):
        build_vocab(workdir)
        assert train_model(workdir, "maxent.nndwl", "--hidden", "", "--epochs", "1") == 0
        assert load_model(workdir / "maxent.nndwl").dims == [51, 51]
        assert train_model(workdir, "sim.nndwl", "--hidden", "1000", "--epochs", "1") == 0
        assert load_model(workdir / "sim.nndwl").dims == [51, 1000, 51]

    def test_config_file_with_override(self, workdir):
        build_vocab(workdir)
        cfg = workdir / "train.cfg"
        cfg.write_text("hidden_dims=4,3\nepochs=1\nlearning_rate=0.5\n")
        assert train_model(workdir, "c.nndwl", "--config", str(cfg), "--lr", "0.1") == 0
        manifest = json.loads((workdir / "c.nndwl.manifest.json").read_text())
        assert manifest["config"]["resolved_config"]["learning_rate"] == 0.1
        assert manifest["config"]["resolved_config"]["hidden_dims"] == [4, 3]
        assert "config" in manifest["inputs"]

    def test_invalid_config(self, workdir):
        build_vocab(workdir)
        assert train_model(workdir, "x.nndwl", "--dropout", "1.5") == 2

    def test_divergence_exit_code(self, workdir):
        build_vocab(workdir)
        code = train_model(workdir, "d.nndwl", "--hidden", "", "--lr", "1e308", "--l2", "10",
                           "--batch", "full", "--epochs", "5")
        assert code == 3
        assert load_model(workdir / "d.nndwl").is_finite()

    def test_replay_reproduces(self, workdir):
        build_vocab(workdir)
        train_model(workdir, "r.nndwl", *FAST, "--dropout", "0.4")
        first = (workdir / "r.nndwl").read_bytes()
        (workdir / "r.nndwl").unlink()
        assert main(["replay", str(workdir / "r.nndwl.manifest.json")]) == 0
        assert (workdir / "r.nndwl").read_bytes() == first

    def test_replay_detects_changed_input(self, workdir):
        build_vocab(workdir)
        train_model(workdir, "r.nndwl", *FAST)
        with open(workdir / "train.src", "a") as f:
            f.write("s1\n")
        with open(workdir / "train.tgt", "a") as f:
            f.write("t1\n")
        assert main(["replay", str(workdir / "r.nndwl.manifest.json")]) == 2


def zero_model_file(d, name="zero.nndwl"):
    sv = Vocabulary.load(d / "vocab/source.vocab", side=SOURCE)
    tv = Vocabulary.load(d / "vocab/target.vocab", side=TARGET)
    meta = ModelMetadata(sv.content_hash(), tv.content_hash())
    save_model(zero_model([len(sv), len(tv)], meta), d / name)


class TestEval:
    def test_zero_model_ln2(self, workdir, capsys):
        build_vocab(workdir)
        zero_model_file(workdir)
        capsys.readouterr()
        assert main(["eval", *model_args(workdir, "zero.nndwl"), "--src", str(workdir / "valid.src"),
                     "--tgt", str(workdir / "valid.tgt"), "--per-word"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "pairs\t30"
        assert float(lines[1].split("\t")[1]) == pytest.approx(math.log(2), abs=1e-12)
        # 0.5 is exactly at the threshold: everything predicted absent
        rows = [l.split("\t") for l in lines[3:]]
        assert all(r[1] == "nan" and r[2] in ("0.000000", "nan") for r in rows)

    def test_vocab_mismatch(self, workdir):
        build_vocab(workdir)
        zero_model_file(workdir)
        build_vocab(workdir, "--src-cutoff", "10")
        assert main(["eval", *model_args(workdir, "zero.nndwl"), "--src", str(workdir / "valid.src"),
                     "--tgt", str(workdir / "valid.tgt")]) == 2

    def test_report_file_and_manifest(self, workdir):
        build_vocab(workdir)
        train_model(workdir, "model.nndwl", *FAST)
        out = workdir / "eval.txt"
        assert main(["eval", *model_args(workdir), "--src", str(workdir / "valid.src"),
                     "--tgt", str(workdir / "valid.tgt"), "--out", str(out)]) == 0
        assert out.read_text().startswith("pairs\t30\n")
        assert (workdir / "eval.txt.manifest.json").is_file()


class TestPrecomputeAndRescore:
    @pytest.fixture
    def trained(self, workdir):
        build_vocab(workdir)
        train_model(workdir, "model.nndwl", *FAST)
        (workdir / "pt").write_text("s1 ||| t1 ||| 0.5\ns1 s2 ||| t1 t2 ||| 0.5\ns3 ||| t9 ||| 1\n")
        (workdir / "test.src").write_text("s1 s2\ns3\n")
        (workdir / "nbest").write_text(
            "0 ||| t1 t2 ||| f= -1 ||| -1.5\n0 ||| t1 t1 ||| f= -2 ||| -2.5\n1 ||| t9 ||| f= 0 ||| 0\n")
        return workdir

    def test_precompute_words(self, trained, capsys):
        capsys.readouterr()
        assert main(["precompute", *model_args(trained), "--src", str(trained / "test.src"),
                     "--phrase-table", str(trained / "pt")]) == 0
        rows = [l.split("\t") for l in capsys.readouterr().out.splitlines()]
        assert [(r[0], r[1]) for r in rows] == [("0", "t1"), ("0", "t2"), ("1", "t9")]
        assert all(float(r[2]) <= 0 for r in rows)

    def test_precompute_phrase_pairs(self, trained, capsys):
        capsys.readouterr()
        main(["precompute", *model_args(trained), "--src", str(trained / "test.src"),
              "--phrase-table", str(trained / "pt"), "--phrase-pairs"])
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 3 and lines[0].startswith("0 ||| s1 ||| t1 ||| ")

    def rescore(self, d, *extra, nbest="nbest", out="out"):
        code = main(["rescore", *model_args(d), "--src", str(d / "test.src"),
                     "--nbest", str(d / nbest), "--out", str(d / out), *extra])
        return code, (d / out).read_text().splitlines() if code == 0 else None

    def test_weight_zero(self, trained):
        code, lines = self.rescore(trained, "--weight", "0")
        assert code == 0
        totals = [float(l.split(" ||| ")[3]) for l in lines]
        assert totals == [-1.5, -2.5, 0.0]
        assert all("nndwl= " in l for l in lines)
        assert (trained / "out.manifest.json").is_file()

    def test_modes(self, trained):
        _, uni = self.rescore(trained, "--mode", "unique", out="u")
        _, pos = self.rescore(trained, "--mode", "positional", out="p")
        assert uni[0] == pos[0] and uni[2] == pos[2]
        assert uni[1] != pos[1]

    def test_idempotent(self, trained):
        _, once = self.rescore(trained, "--weight", "0.5", out="once")
        _, twice = self.rescore(trained, "--weight", "0.5", nbest="once", out="twice")
        assert once == twice

    def test_malformed(self, trained):
        (trained / "bad").write_text("0 ||| t1 ||| f= 1 ||| 0\nnot an nbest line\n")
        code, _ = self.rescore(trained, nbest="bad")
        assert code == 2

    def test_id_out_of_range(self, trained):
        (trained / "bad").write_text("7 ||| t1 ||| f= 1 ||| 0\n")
        assert self.rescore(trained, nbest="bad")[0] == 2

    def test_with_phrase_table(self, trained):
        code, lines = self.rescore(trained, "--phrase-table", str(trained / "pt"), "--oov", "skip")
        assert code == 0 and len(lines) == 3
