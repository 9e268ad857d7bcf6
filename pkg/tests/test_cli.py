import json
import os

import numpy as np
import pytest

from gazedet import gaze as gz
from gazedet.cli import main
from gazedet.gaze import Fixation, GazeSample


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestSynth:
    def test_writes_dataset(self, capsys, tmp_path):
        out = str(tmp_path / "data")
        code, stdout, _ = run(capsys, "synth", "--out", out, "--n", "6",
                              "--size", "32", "--seed", "1")
        assert code == 0
        assert "resolved config" in stdout
        assert os.path.exists(os.path.join(out, "manifest.json"))

    def test_deterministic(self, capsys, tmp_path):
        for name in ("a", "b"):
            run(capsys, "synth", "--out", str(tmp_path / name), "--n", "4",
                "--size", "32", "--seed", "3")
        ma = (tmp_path / "a" / "manifest.json").read_bytes()
        mb = (tmp_path / "b" / "manifest.json").read_bytes()
        assert ma == mb

    def test_nonpositive_n_rejected(self, capsys, tmp_path):
        code, _, stderr = run(capsys, "synth", "--out", str(tmp_path / "d"),
                              "--n", "0")
        assert code == 1 and "error" in stderr

    def test_env_seed_fallback(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("GFD_SEED", "17")
        code, stdout, _ = run(capsys, "synth", "--out", str(tmp_path / "d"),
                              "--n", "2", "--size", "32")
        assert code == 0
        assert '"seed": 17' in stdout

    def test_bad_env_seed(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("GFD_SEED", "lots")
        code, _, stderr = run(capsys, "synth", "--out", str(tmp_path / "d"),
                              "--n", "2")
        assert code == 1 and "GFD_SEED" in stderr


class TestFixationsAndHeatmap:
    @pytest.fixture
    def gaze_csv(self, tmp_path):
        path = str(tmp_path / "gaze.csv")
        stream = [GazeSample(i * 10.0, 100.0, 100.0) for i in range(30)]
        stream += [GazeSample(300 + i * 10.0, 300.0, 200.0) for i in range(30)]
        gz.write_gaze_csv(path, stream)
        return path

    def test_pipeline_to_heatmap(self, capsys, tmp_path, gaze_csv):
        fix_csv = str(tmp_path / "fix.csv")
        code, stdout, _ = run(capsys, "fixations", "--gaze", gaze_csv,
                              "--out", fix_csv)
        assert code == 0 and "2 fixations" in stdout
        fixes = gz.read_fixation_csv(fix_csv)
        assert {(f.cx_px, f.cy_px) for f in fixes} == {(100.0, 100.0), (300.0, 200.0)}

        pgm = str(tmp_path / "map.pgm")
        fmap = str(tmp_path / "map.gfm")
        code, _, _ = run(capsys, "heatmap", "--fixations", fix_csv, "--out", pgm,
                         "--width", "512", "--height", "512", "--float-out", fmap)
        assert code == 0
        values = gz.read_float_map(fmap)
        assert values.shape == (512, 512)
        assert values[100, 100] > 0.9 and values[200, 300] > 0.9

    def test_missing_input_file(self, capsys, tmp_path):
        code, _, stderr = run(capsys, "fixations", "--gaze",
                              str(tmp_path / "nope.csv"), "--out",
                              str(tmp_path / "f.csv"))
        assert code == 1 and "error" in stderr

    def test_idempotent_outputs(self, capsys, tmp_path, gaze_csv):
        outs = []
        for name in ("f1.csv", "f2.csv"):
            path = str(tmp_path / name)
            run(capsys, "fixations", "--gaze", gaze_csv, "--out", path)
            outs.append(open(path, "rb").read())
        assert outs[0] == outs[1]


class TestGradcheck:
    def test_quick_suite_passes(self, capsys):
        code, stdout, _ = run(capsys, "gradcheck", "--seeds", "2", "--skip-e2e")
        assert code == 0
        assert "OK" in stdout


class TestParsing:
    def test_unknown_flag_exit_1(self, capsys):
        code, _, stderr = run(capsys, "synth", "--out", "/tmp/x", "--n", "2",
                              "--bogus-flag")
        assert code == 1 and "error" in stderr

    def test_missing_subcommand_exit_1(self, capsys):
        code, _, _ = run(capsys, )
        assert code == 1

    def test_config_file_defaults_and_precedence(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n": 3, "size": 32, "seed": 9}))
        out = str(tmp_path / "d1")
        code, stdout, _ = run(capsys, "synth", "--out", out, "--n", "2",
                              "--config", str(cfg))
        assert code == 0
        assert "wrote 2 readings" in stdout  # explicit --n beats the config file
        assert '"seed": 9' in stdout  # config value fills the unset flag

    def test_config_file_unknown_key(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"wibble": 1}))
        code, _, stderr = run(capsys, "synth", "--out", str(tmp_path / "d"),
                              "--n", "2", "--config", str(cfg))
        assert code == 1 and "unknown keys" in stderr


class TestTrainEvalRoundTrip:
    def test_train_then_eval(self, capsys, tmp_path):
        data = str(tmp_path / "data")
        run(capsys, "synth", "--out", data, "--n", "8", "--size", "32",
            "--seed", "0", "--train-frac", "0.5", "--val-frac", "0.25")
        rundir = str(tmp_path / "run")
        code, _, err = run(capsys, "train", "--dataset", data, "--out", rundir,
                           "--epochs", "1", "--seed", "0")
        assert code == 0, err
        evaldir = str(tmp_path / "eval")
        code, stdout, err = run(capsys, "eval", "--checkpoint",
                                os.path.join(rundir, "checkpoint_last.json"),
                                "--dataset", data, "--out", evaldir)
        assert code == 0, err
        assert "AP@[IoBB=0.50]" in stdout
        assert os.path.exists(os.path.join(evaldir, "report.json"))

        report_dir = str(tmp_path / "rerender")
        code, stdout2, err = run(capsys, "report", "--predictions",
                                 os.path.join(evaldir, "predictions.json"),
                                 "--dataset", data, "--out", report_dir)
        assert code == 0, err
        table = lambda s: [l for l in s.splitlines() if l.startswith("|")]
        assert table(stdout2) == table(stdout)
