"""Command-line surface: every subcommand end to end in a temp dir, the
config-file/flag override rules, and the exit-code contract."""

import csv
import json

import pytest

from mmproto.cli import main
from mmproto.harness import TrainConfig
from mmproto.store import read_store


def run(*argv):
    return main(list(argv))


@pytest.fixture
def store_dir(tmp_path):
    """A small generated-and-split store on disk."""
    path = tmp_path / "store"
    assert run("gen", "--out", str(path), "--seed", "1", "--classes", "4",
               "--videos-per-class", "4", "--frames", "3", "--dim", "8",
               "--templates", "2") == 0
    assert run("split", "--store", str(path), "--counts", "2,0,2") == 0
    return path


def fast_flags(store_dir):
    return ["--store", str(store_dir), "--n-way", "2", "--k-shot", "1",
            "--m-queries", "1", "--d-k", "4", "--d-p", "8",
            "--train-episodes", "3", "--test-episodes", "4"]


class TestGenAndSplit:
    def test_gen_writes_readable_store(self, tmp_path, capsys):
        path = tmp_path / "s"
        assert run("gen", "--out", str(path), "--seed", "2", "--classes",
                   "3", "--videos-per-class", "2", "--frames", "3",
                   "--dim", "8") == 0
        assert "wrote store" in capsys.readouterr().out
        store = read_store(path)
        assert len(store.manifest.classes) == 3
        assert store.manifest.frames_per_video == 3

    def test_split_records_assignment(self, store_dir):
        store = read_store(store_dir)
        assert store.split_class_indices("base") == [0, 1]
        assert store.split_class_indices("novel") == [2, 3]

    def test_split_explicit_names(self, tmp_path):
        path = tmp_path / "s"
        run("gen", "--out", str(path), "--classes", "3",
            "--videos-per-class", "2", "--frames", "3", "--dim", "8")
        assert run("split", "--store", str(path),
                   "--base", "class00,class01", "--val", "",
                   "--novel", "class02") == 0
        assert read_store(path).split_class_indices("novel") == [2]

    def test_split_bad_counts_exit_2(self, tmp_path, capsys):
        path = tmp_path / "s"
        run("gen", "--out", str(path), "--classes", "3",
            "--videos-per-class", "2", "--frames", "3", "--dim", "8")
        assert run("split", "--store", str(path), "--counts", "2,0,2") == 2
        assert "error:" in capsys.readouterr().err


class TestTrainEvalPride:
    def test_train_writes_params_and_meta(self, store_dir, tmp_path, capsys):
        params = tmp_path / "params.bin"
        curve = tmp_path / "curve.csv"
        assert run("train", *fast_flags(store_dir), "--out-params",
                   str(params), "--out-curve", str(curve)) == 0
        assert "trained 3 episodes" in capsys.readouterr().out
        assert params.exists()
        meta = json.loads((tmp_path / "params.bin.meta.json").read_text())
        assert meta["config"]["train_episodes"] == 3
        assert meta["selected"] == "final"
        with open(curve, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["episode", "loss"] and len(rows) == 4

    def test_eval_roundtrip(self, store_dir, tmp_path, capsys):
        params = tmp_path / "params.bin"
        run("train", *fast_flags(store_dir), "--out-params", str(params))
        report = tmp_path / "report.json"
        assert run("eval", *fast_flags(store_dir), "--params", str(params),
                   "--report", str(report)) == 0
        assert "accuracy" in capsys.readouterr().out
        obj = json.loads(report.read_text())
        assert 0.0 <= obj["accuracy"] <= 1.0
        assert obj["config"]["store"] == str(store_dir)

    def test_eval_with_pride_flag(self, store_dir, tmp_path, capsys):
        assert run("eval", *fast_flags(store_dir), "--k-shot", "2",
                   "--with-pride") == 0
        assert "mean PRIDE" in capsys.readouterr().out

    def test_pride_csv(self, store_dir, tmp_path, capsys):
        out = tmp_path / "pride.csv"
        assert run("pride", *fast_flags(store_dir), "--k-shot", "2",
                   "--csv", str(out)) == 0
        assert "mean PRIDE" in capsys.readouterr().out
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["class_name", "mean_pride", "n_videos"]
        assert len(rows) == 3   # 2 novel classes
        meta = json.loads((tmp_path / "pride.csv.meta.json").read_text())
        assert "overall_mean" in meta

    def test_sweep_csv(self, store_dir, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        assert run("sweep", *fast_flags(store_dir), "--train-episodes", "2",
                   "--modes", "weighted_average", "--lams", "0.0,0.5",
                   "--csv", str(out)) == 0
        assert capsys.readouterr().out.count("mode=") == 2
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 3
        assert rows[1][1] == "0.0" and rows[2][1] == "0.5"


class TestConfigFile:
    def test_config_file_with_flag_override(self, store_dir, tmp_path):
        config = TrainConfig(store=str(store_dir), n_way=2, k_shot=1,
                             m_queries=1, d_k=4, d_p=8, train_episodes=5,
                             test_episodes=4)
        cfg_path = tmp_path / "run.json"
        config.save(cfg_path)
        params = tmp_path / "p.bin"
        assert run("train", "--config", str(cfg_path),
                   "--train-episodes", "2",
                   "--out-params", str(params)) == 0
        meta = json.loads((tmp_path / "p.bin.meta.json").read_text())
        assert meta["config"]["train_episodes"] == 2     # flag wins
        assert meta["config"]["n_way"] == 2              # file preserved

    def test_missing_store_exit_2(self, capsys):
        assert run("train", "--train-episodes", "1") == 2
        assert "store" in capsys.readouterr().err

    def test_bad_config_file_exit_2(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{\"config_version\": 1, \"bogus\": 3}")
        assert run("train", "--config", str(path)) == 2
        assert "bogus" in capsys.readouterr().err


class TestExitCodes:
    def test_unknown_mode_exit_2(self, store_dir, capsys):
        assert run("eval", *fast_flags(store_dir),
                   "--mpe-mode", "psychic") == 2
        assert "psychic" in capsys.readouterr().err

    def test_capacity_shortfall_exit_3(self, store_dir, capsys):
        assert run("eval", *fast_flags(store_dir), "--n-way", "3") == 3
        assert "error:" in capsys.readouterr().err

    def test_unreadable_store_exit_3(self, tmp_path, capsys):
        assert run("eval", "--store", str(tmp_path / "void"),
                   "--test-episodes", "2") == 3
        assert "error:" in capsys.readouterr().err

    def test_divergence_exit_4(self, store_dir, capsys):
        assert run("train", *fast_flags(store_dir), "--lr", "1e38") == 4
        assert "diverged" in capsys.readouterr().err
