import json

import numpy as np
import pytest

from koopkit import cli, simwell
from koopkit.models import build_model, save_checkpoint

TINY_MODEL = {"d_lift": 4, "hidden": 6, "phi_layers": 2, "ae_layers": 1}


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_config(path, **overrides):
    cfg = {"total_steps": 6, "batch_size": 8, "n_start": 2, "n_end": 3,
           "eval_every": 3, "seed": 1, "early_stop": False,
           "model": dict(TINY_MODEL)}
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return path


class TestUsageErrors:
    def test_no_args_prints_usage_exit_1(self, capsys):
        code, _, err = run_cli(capsys)
        assert code == 1
        assert "usage" in err.lower()

    def test_unknown_flag_exit_1(self, capsys):
        code, _, err = run_cli(capsys, "gen-well", "--steps", "10", "--seed", "1",
                               "--out", "x.kds", "--frobnicate")
        assert code == 1
        assert "frobnicate" in err

    def test_missing_required_flag_exit_1(self, capsys):
        code, _, err = run_cli(capsys, "gen-well", "--steps", "10")
        assert code == 1


class TestGenWell:
    def test_deterministic_outputs(self, tmp_path, capsys):
        a, b = tmp_path / "a.kds", tmp_path / "b.kds"
        code1, _, _ = run_cli(capsys, "gen-well", "--steps", "1000", "--seed", "7",
                              "--out", str(a))
        code2, _, _ = run_cli(capsys, "gen-well", "--steps", "1000", "--seed", "7",
                              "--out", str(b))
        assert code1 == 0 and code2 == 0
        assert a.read_bytes() == b.read_bytes()

    def test_banner_is_json_on_stderr(self, tmp_path, capsys):
        out = tmp_path / "c.kds"
        code, _, err = run_cli(capsys, "gen-well", "--steps", "10", "--seed", "3",
                               "--out", str(out))
        assert code == 0
        banner = json.loads(err.strip().splitlines()[0])
        assert banner["command"] == "gen-well"
        assert banner["steps"] == 10 and banner["seed"] == 3

    def test_custom_range_respected(self, tmp_path, capsys):
        out = tmp_path / "r.kds"
        code, _, _ = run_cli(capsys, "gen-well", "--steps", "500", "--seed", "2",
                             "--out", str(out), "--range", "-1", "1")
        assert code == 0
        ds = simwell.read_dataset(out)
        assert ds.controls.min() >= -1.0 and ds.controls.max() < 1.0


@pytest.fixture()
def small_dataset(tmp_path, capsys):
    path = tmp_path / "well.kds"
    assert cli.main(["gen-well", "--steps", "1500", "--seed", "11",
                     "--out", str(path)]) == 0
    capsys.readouterr()
    return path


class TestTrainPredictEval:
    def test_full_pipeline(self, tmp_path, small_dataset, capsys):
        cfg_path = write_config(tmp_path / "cfg.json")
        ckpts = {}
        for kind in ("traditional", "convex", "extended"):
            ckpt = tmp_path / f"{kind}.kck"
            csv_path = tmp_path / f"{kind}.csv"
            code, out, err = run_cli(capsys, "train", "--model", kind,
                                     "--data", str(small_dataset),
                                     "--config", str(cfg_path),
                                     "--out", str(ckpt), "--csv", str(csv_path))
            assert code == 0, err
            assert ckpt.exists()
            assert csv_path.read_text().startswith("step,n,dynamics")
            banner = json.loads(err.strip().splitlines()[0])
            assert banner["train_config"]["total_steps"] == 6
            ckpts[kind] = ckpt

        pred_csv = tmp_path / "pred.csv"
        pred_svg = tmp_path / "pred.svg"
        code, out, err = run_cli(capsys, "predict", "--ckpt", str(ckpts["extended"]),
                                 "--data", str(small_dataset),
                                 "--start-index", "1450", "--horizon", "30",
                                 "--csv", str(pred_csv), "--svg", str(pred_svg))
        assert code == 0, err
        lines = pred_csv.read_text().strip().splitlines()
        assert len(lines) == 31
        assert pred_svg.read_text().startswith("<svg")

        report_csv = tmp_path / "report.csv"
        code, out, err = run_cli(capsys, "eval",
                                 "--ckpt", str(ckpts["traditional"]),
                                 "--ckpt", str(ckpts["convex"]),
                                 "--ckpt", str(ckpts["extended"]),
                                 "--data", str(small_dataset),
                                 "--windows", "4", "--horizon", "12",
                                 "--tau", "0.5", "--out", str(report_csv))
        assert code == 0, err
        lines = report_csv.read_text().strip().splitlines()
        assert lines[0] == "model,tau,median_horizon,horizons"
        assert len(lines) == 4
        kinds = {line.split(",")[0] for line in lines[1:]}
        assert kinds == {"traditional", "convex", "extended"}

    def test_inspect_prints_config(self, tmp_path, capsys):
        ckpt = tmp_path / "m.kck"
        save_checkpoint(build_model("convex", 2, 1, seed=3, **TINY_MODEL), ckpt)
        code, out, _ = run_cli(capsys, "inspect", "--ckpt", str(ckpt))
        assert code == 0
        blob = json.loads(out)
        assert blob["kind"] == "convex"
        assert blob["dims"]["d_lift"] == 4
        assert "phi.l1.w" in blob["parameters"]


class TestRuntimeErrors:
    def test_missing_dataset_exit_2_names_path(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path / "cfg.json")
        code, _, err = run_cli(capsys, "train", "--model", "convex",
                               "--data", str(tmp_path / "nope.kds"),
                               "--config", str(cfg_path),
                               "--out", str(tmp_path / "m.kck"))
        assert code == 2
        assert "nope.kds" in err

    def test_bad_checkpoint_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.kck"
        bad.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
        code, _, err = run_cli(capsys, "inspect", "--ckpt", str(bad))
        assert code == 2
        assert "magic" in err

    def test_unknown_config_key_exit_2(self, tmp_path, small_dataset, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"total_steps": 2, "bogus_knob": 1}))
        code, _, err = run_cli(capsys, "train", "--model", "convex",
                               "--data", str(small_dataset),
                               "--config", str(cfg_path),
                               "--out", str(tmp_path / "m.kck"))
        assert code == 2
        assert "bogus_knob" in err
