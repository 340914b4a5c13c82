import json

import numpy as np

from blocknewton.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, cli
from blocknewton.data import load_idx


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


SMALL = {
    "architecture": [4, 6, 3],
    "activation": "sigmoid",
    "train": {"learning_rate": 0.1, "epochs": 2, "batch_size": 8, "seed": 0},
    "dataset": {"kind": "blobs", "classes": 3, "dim": 4, "per_class": 15, "spread": 0.05},
}


class TestTrain:
    def test_writes_metrics_and_summary(self, tmp_path, capsys):
        cfg = write_config(tmp_path, SMALL)
        code = cli(["train", "--config", cfg, "--out", str(tmp_path), "--no-timing"])
        assert code == EXIT_OK
        metrics = (tmp_path / "metrics.jsonl").read_text().strip().split("\n")
        assert len(metrics) == 2
        assert json.loads(metrics[0])["epoch"] == 0
        assert (tmp_path / "summary.csv").read_text().startswith("epoch,loss")
        assert "final loss" in capsys.readouterr().out

    def test_no_timing_runs_are_bit_identical(self, tmp_path):
        cfg = write_config(tmp_path, SMALL)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert cli(["train", "--config", cfg, "--out", str(out), "--no-timing"]) == EXIT_OK
        assert (out1 / "metrics.jsonl").read_bytes() == (out2 / "metrics.jsonl").read_bytes()
        assert (out1 / "summary.csv").read_bytes() == (out2 / "summary.csv").read_bytes()

    def test_seed_override_changes_output(self, tmp_path):
        cfg = write_config(tmp_path, SMALL)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        cli(["train", "--config", cfg, "--out", str(out1), "--no-timing"])
        cli(["train", "--config", cfg, "--out", str(out2), "--no-timing", "--seed", "99"])
        assert (out1 / "metrics.jsonl").read_bytes() != (out2 / "metrics.jsonl").read_bytes()


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path, SMALL)
        assert cli(["train", "--config", cfg, "--bogus"]) == EXIT_CONFIG
        capsys.readouterr()

    def test_missing_config_file(self, tmp_path, capsys):
        code = cli(["train", "--config", str(tmp_path / "nope.json")])
        assert code == EXIT_CONFIG
        assert "error" in capsys.readouterr().err

    def test_malformed_json(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert cli(["train", "--config", str(path)]) == EXIT_CONFIG
        capsys.readouterr()

    def test_bad_spec_value(self, tmp_path, capsys):
        doc = dict(SMALL, architecture=[4])
        cfg = write_config(tmp_path, doc)
        assert cli(["train", "--config", cfg]) == EXIT_CONFIG
        capsys.readouterr()


class TestGrid:
    def test_writes_grid_json(self, tmp_path, capsys):
        doc = dict(SMALL, grid={"learning_rate": [0.05, 0.1]})
        cfg = write_config(tmp_path, doc)
        assert cli(["grid", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
        result = json.loads((tmp_path / "grid.json").read_text())
        assert len(result["runs"]) == 2
        assert "best_by_loss" in result and "best_by_accuracy" in result
        capsys.readouterr()

    def test_grid_requires_grid_section(self, tmp_path, capsys):
        cfg = write_config(tmp_path, SMALL)
        assert cli(["grid", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG
        capsys.readouterr()


class TestCompareAndBound:
    def test_compare_writes_csv(self, tmp_path, capsys):
        doc = dict(SMALL, compare_steps=2)
        cfg = write_config(tmp_path, doc)
        code = cli(["compare-curvature", "--config", cfg, "--out", str(tmp_path)])
        assert code == EXIT_OK
        text = (tmp_path / "curvature_errors.csv").read_text()
        assert text.startswith("layer,fisher,gauss_newton,pch1,pch2")
        assert capsys.readouterr().out == text

    def test_bound_check_prints_pass(self, tmp_path, capsys):
        cfg = write_config(tmp_path, SMALL)
        code = cli(["bound-check", "--config", cfg, "--out", str(tmp_path), "--batch", "8"])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "layer 2:" in out and "PASS" in out and "FAIL" not in out
        lines = (tmp_path / "bound_check.jsonl").read_text().strip().split("\n")
        assert all(json.loads(l)["holds"] for l in lines)


class TestGenData:
    def test_round_trip(self, tmp_path, capsys):
        code = cli(
            [
                "gen-data",
                "--classes", "3",
                "--dim", "4",
                "--per-class", "5",
                "--seed", "2",
                "--out", str(tmp_path),
            ]
        )
        assert code == EXIT_OK
        ds = load_idx(tmp_path / "blobs-images.idx", tmp_path / "blobs-labels.idx")
        assert ds.features.shape == (15, 4)
        assert set(ds.labels) == {0, 1, 2}
        assert np.all(ds.features >= 0.0) and np.all(ds.features <= 1.0)
        capsys.readouterr()
