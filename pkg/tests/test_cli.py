import io
import math
from pathlib import Path

import numpy as np
import pytest

from acblstm import cli
from acblstm.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from acblstm.cli import load_model, read_metrics, run_command, save_model
from acblstm.config import RunConfig, parse_config
from acblstm.data import build_embeddings
from acblstm.errors import ConfigError, FormatError
from acblstm.gan import Generator
from acblstm.model import AcBlstmModel
from acblstm.synthetic import keyword_corpus, write_tsv

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SMALL = ["--embed_dim", "8", "--filters", "4", "--lstm_dim", "4", "--epochs", "2",
         "--batch_size", "8", "--repeats", "1"]


@pytest.fixture
def corpus(tmp_path):
    write_tsv(keyword_corpus(48, seed=0), tmp_path / "train.tsv", ["neg", "pos"])
    write_tsv(keyword_corpus(16, seed=1), tmp_path / "test.tsv", ["neg", "pos"])
    return tmp_path


def train(corpus, out="run", *extra):
    return run_command(["train", "--config", str(CONFIGS / "trec.cfg"),
                        "--dataset", str(corpus / "train.tsv"),
                        "--test_dataset", str(corpus / "test.tsv"),
                        "--out", str(corpus / out), *SMALL, *extra])


class TestParseConfig:
    def test_defaults(self, tmp_path, monkeypatch):
        monkeypatch.delenv("ACBLSTM_SEED", raising=False)
        p = tmp_path / "empty.cfg"
        p.write_text("")
        cfg = parse_config(p)
        assert cfg.k_set == (2, 3, 4)
        assert cfg.learning_rate == 1e-4 and cfg.clip_threshold == 0.5 and cfg.repeats == 10

    def test_file_value(self):
        assert parse_config(CONFIGS / "sst1.cfg").p_g == 0.1

    def test_override_beats_file(self):
        assert parse_config(CONFIGS / "sst1.cfg", {"p_g": "0.3"}).p_g == 0.3

    def test_env_seed_below_file(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ACBLSTM_SEED", "17")
        assert parse_config().seed == 17
        p = tmp_path / "s.cfg"
        p.write_text("seed = 4\n")
        assert parse_config(p).seed == 4

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("# comment\nfilters = 100\nwidth = 3\n")
        with pytest.raises(ConfigError) as err:
            parse_config(p)
        assert err.value.key == "width" and err.value.line == 3

    def test_filters_must_match_lstm(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("filters = 50  # too few\nlstm_dim = 100\n")
        with pytest.raises(ConfigError) as err:
            parse_config(p)
        assert err.value.key == "filters" and err.value.line == 1

    def test_unparsable(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("epochs = many\n")
        with pytest.raises(ConfigError) as err:
            parse_config(p)
        assert err.value.key == "epochs"

    def test_missing_path(self):
        with pytest.raises(ConfigError) as err:
            parse_config(overrides={"dataset": "/nonexistent.tsv"}, check_paths=True)
        assert err.value.key == "dataset"


def tiny_model(seed=0, gan=False):
    run = RunConfig(embed_dim=6, filters=3, lstm_dim=3, gan=gan, c_g=4, latent_dim=5)
    return AcBlstmModel(run.model_config(3, 8), seed=seed), run


class TestCheckpoint:
    def test_round_trip_logits(self, tmp_path):
        model, run = tiny_model()
        x = np.random.default_rng(0).normal(size=(16, 8, 6))
        model.forward(x, "train")  # move batchnorm statistics off their defaults
        table = build_embeddings(["a", "b"], 6, seed=0)
        save_model(tmp_path / "m.ckpt", model, table, run)
        loaded, table2, gen, _ = load_model(tmp_path / "m.ckpt")
        assert gen is None
        assert loaded.forward(x).data.tobytes() == model.forward(x).data.tobytes()
        assert table2.matrix.tobytes() == table.matrix.tobytes()
        assert loaded.rng.bit_generator.state == model.rng.bit_generator.state

    def test_generator_saved(self, tmp_path):
        model, run = tiny_model(gan=True)
        gen = Generator(run.gan_config(8), seed=2)
        save_model(tmp_path / "m.ckpt", model, build_embeddings([], 6, 0), run, gen)
        _, _, gen2, _ = load_model(tmp_path / "m.ckpt")
        z = np.random.default_rng(1).normal(size=(3, 5))
        assert gen2.forward(z, "eval").data.tobytes() == gen.forward(z, "eval").data.tobytes()

    def test_scalar_and_empty_tensors(self, tmp_path):
        tensors = {"s": np.array(2.5), "e": np.zeros((0, 3)), "m": np.arange(6.0).reshape(2, 3)}
        save_checkpoint(tmp_path / "t.ckpt", tensors, {"note": "x y"}, {"k": [1, 2]})
        ck = load_checkpoint(tmp_path / "t.ckpt")
        assert isinstance(ck, Checkpoint)
        for k, v in tensors.items():
            assert ck.tensors[k].shape == v.shape and ck.tensors[k].tobytes() == v.tobytes()
        assert ck.config["note"] == "x y" and ck.rng_state == {"k": [1, 2]}

    def test_corrupt(self, tmp_path):
        p = tmp_path / "bad.ckpt"
        p.write_bytes(b"not a checkpoint\n")
        with pytest.raises(FormatError):
            load_checkpoint(p)

    def test_truncated(self, tmp_path):
        save_checkpoint(tmp_path / "t.ckpt", {"m": np.ones((4, 4))})
        data = (tmp_path / "t.ckpt").read_bytes()
        (tmp_path / "t.ckpt").write_bytes(data[:-8])
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "t.ckpt")


class TestCommands:
    def test_train_writes_artifacts(self, corpus, capsys):
        assert train(corpus) == 0
        out = corpus / "run"
        assert (out / "model_r0.ckpt").is_file()
        assert sorted((out / "labels.txt").read_text().split()) == ["neg", "pos"]
        records = read_metrics(out / "metrics.txt")
        kinds = [r["type"] for r in records]
        assert kinds == ["config", "epoch", "epoch", "test", "summary"]
        assert records[0]["filters"] == "4" and records[0]["lstm_layers"] == "1"
        epoch = records[1]
        for key in ("repeat", "epoch", "loss", "train_acc", "val_acc", "sum_norm_mean",
                    "sum_norm_max", "wall"):
            assert key in epoch
        assert math.isfinite(float(epoch["loss"]))
        assert "+/-" in capsys.readouterr().out

    def test_metrics_append_only(self, corpus):
        assert train(corpus) == 0
        first = (corpus / "run" / "metrics.txt").read_text()
        assert train(corpus) == 0
        second = (corpus / "run" / "metrics.txt").read_text()
        assert second.startswith(first)
        assert second.count("\n") == 2 * first.count("\n")

    def test_same_seed_same_checkpoint(self, corpus):
        assert train(corpus, "a") == 0
        first = (corpus / "a" / "model_r0.ckpt").read_bytes()
        (corpus / "a" / "model_r0.ckpt").unlink()
        assert train(corpus, "a") == 0
        assert (corpus / "a" / "model_r0.ckpt").read_bytes() == first

    def test_repeats_use_distinct_seeds(self, corpus):
        assert train(corpus, "r", "--repeats", "2") == 0
        a = load_checkpoint(corpus / "r" / "model_r0.ckpt").tensors
        b = load_checkpoint(corpus / "r" / "model_r1.ckpt").tensors
        assert a["classifier.weight"].tobytes() != b["classifier.weight"].tobytes()
        summary = read_metrics(corpus / "r" / "metrics.txt")[-1]
        assert summary["type"] == "summary" and summary["repeats"] == "2"

    def test_cross_validation(self, corpus):
        code = run_command(["train", "--dataset", str(corpus / "train.tsv"),
                            "--out", str(corpus / "cv"), "--folds", "3", *SMALL])
        assert code == 0
        tests = [r for r in read_metrics(corpus / "cv" / "metrics.txt") if r["type"] == "test"]
        assert [r["fold"] for r in tests] == ["0", "1", "2"]

    def test_semi_supervised(self, corpus):
        assert train(corpus, "g", "--gan", "--c_g", "4", "--p_g", "0.25") == 0
        records = read_metrics(corpus / "g" / "metrics.txt")
        assert math.isfinite(float(records[1]["loss_g"]))
        code = run_command(["gen-sample", "--checkpoint", str(corpus / "g" / "model_r0.ckpt"),
                            "--count", "3", "--output", str(corpus / "g" / "s.npy")])
        assert code == 0
        samples = np.load(corpus / "g" / "s.npy")
        assert samples.shape[0] == 3 and np.all(np.abs(samples) < 1)

    def test_eval(self, corpus, capsys):
        train(corpus)
        capsys.readouterr()
        code = run_command(["eval", "--checkpoint", str(corpus / "run" / "model_r0.ckpt"),
                            "--dataset", str(corpus / "test.tsv")])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("accuracy") and "16 examples" in lines[0]
        assert sum(int(v) for row in lines[1:] for v in row.split()) == 16

    def test_predict(self, corpus, capsys, monkeypatch):
        train(corpus)
        capsys.readouterr()
        monkeypatch.setattr("sys.stdin", io.StringIO("the key1 film\n\nkey0 was it\n"))
        ckpt = str(corpus / "run" / "model_r0.ckpt")
        assert run_command(["predict", "--checkpoint", ckpt]) == 0
        rows = [line.split("\t") for line in capsys.readouterr().out.splitlines()]
        assert len(rows) == 2 and all(r[0] in ("neg", "pos") and 0 < float(r[1]) <= 1
                                      for r in rows)

    def test_predict_empty_stdin(self, corpus, capsys, monkeypatch):
        train(corpus)
        capsys.readouterr()
        monkeypatch.setattr("sys.stdin", io.StringIO(""))
        assert run_command(["predict", "--checkpoint",
                            str(corpus / "run" / "model_r0.ckpt")]) == 0
        assert capsys.readouterr().out == ""

    def test_gradcheck(self, capsys):
        assert run_command(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "max relative error" in out

    def test_gradcheck_over_tolerance(self, monkeypatch):
        import acblstm.gradcheck as gc
        monkeypatch.setattr(gc, "run_gradcheck", lambda seed=0: {"fake": 1.0})
        assert run_command(["gradcheck"]) == 4

    def test_gen_sample_fresh(self, tmp_path):
        out = tmp_path / "g.npy"
        code = run_command(["gen-sample", "--max_len", "12", "--embed_dim", "8", "--c_g", "4",
                            "--count", "2", "--output", str(out)])
        assert code == 0 and np.load(out).shape == (2, 12, 8)

    def test_folds(self, corpus, capsys):
        assert run_command(["folds", "--dataset", str(corpus / "train.tsv")]) == 0
        rows = capsys.readouterr().out.splitlines()
        assert rows[0] == "example_index,fold_id" and len(rows) == 49


class TestExitCodes:
    def test_unknown_command(self, capsys):
        assert run_command(["fly"]) == 2

    def test_no_command(self, capsys):
        assert run_command([]) == 2

    def test_config_error_names_key(self, corpus, capsys):
        assert train(corpus, "x", "--filters", "5") == 1
        assert "filters" in capsys.readouterr().err

    def test_missing_dataset(self, capsys):
        assert run_command(["train", "--dataset", "/nope.tsv"]) == 1

    def test_bad_dataset_line(self, tmp_path, capsys):
        p = tmp_path / "d.tsv"
        p.write_text("pos\tfine\nno tab\n")
        assert run_command(["folds", "--dataset", str(p)]) == 1
        assert "line 2" in capsys.readouterr().err

    def test_numeric_fault(self, corpus, capsys):
        # an infinite step size drives the weights to inf/nan on the first update
        with np.errstate(all="ignore"):
            assert train(corpus, "n", "--learning_rate", "inf") == 3
        assert "numeric error" in capsys.readouterr().err

    def test_checkpoint_required(self, capsys):
        assert run_command(["eval"]) == 1


def test_metrics_sink_quotes(tmp_path):
    sink = cli.MetricsSink(tmp_path / "m.txt")
    sink.write("note", text="two words", empty="", x=0.1)
    assert read_metrics(tmp_path / "m.txt") == [
        {"type": "note", "text": "two words", "empty": "", "x": "0.1"}]
