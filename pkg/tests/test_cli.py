import json
import math
import os

import numpy as np
import pytest

from noisediff.cli import run_cli
from noisediff.fileio import read_checkpoint, read_mixture, read_tensor, write_tensor
from noisediff.tensor import make_rng


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run_cli(["gen-dataset", "--out-dir", str(d), "--size", "8", "--components", "3", "--samples", "2",
                    "--seed", "5"]) == 0
    return d


def interp_args(ws, out, *extra):
    return ["interpolate", "--mixture", str(ws / "mixture.json"), "--a", str(ws / "sample_0.ndtn"),
            "--b", str(ws / "sample_1.ndtn"), "--output", str(out), "--n-steps", "32", *extra]


def test_gen_dataset_outputs(workspace):
    model = read_mixture(workspace / "mixture.json")
    assert model.centers.shape == (3, 8, 8)
    for name in ("mixture_center_0.pgm", "sample_0.ndtn", "sample_1.pgm"):
        assert (workspace / name).exists()


def test_noisediffusion_is_bitwise_deterministic(workspace, tmp_path):
    flags = ["--method", "noisediffusion", "--lambda", "0.5", "--gamma", "0.3162", "--c", "2.0", "--k", "2.2",
             "--seed", "7"]
    assert run_cli(interp_args(workspace, tmp_path / "o1.ndtn", *flags)) == 0
    assert run_cli(interp_args(workspace, tmp_path / "o2.ndtn", *flags)) == 0
    assert (tmp_path / "o1.ndtn").read_bytes() == (tmp_path / "o2.ndtn").read_bytes()
    assert run_cli(interp_args(workspace, tmp_path / "o3.ndtn", *flags[:-1], "8")) == 0
    assert (tmp_path / "o1.ndtn").read_bytes() != (tmp_path / "o3.ndtn").read_bytes()


def test_identity_plan_returns_image_a(workspace, tmp_path):
    out = tmp_path / "id.ndtn"
    assert run_cli(interp_args(workspace, out, "--lambda", "0", "--gamma", "0", "--c", "1", "--k", "inf",
                               "--n-steps", "64")) == 0
    a = read_tensor(workspace / "sample_0.ndtn")
    assert np.linalg.norm(read_tensor(out) - a) / np.linalg.norm(a) <= 1e-2


@pytest.mark.parametrize("method", ["slerp", "noise-inject"])
def test_other_methods_run(workspace, tmp_path, method):
    out, img = tmp_path / "m.ndtn", tmp_path / "m.pgm"
    extra = ["--sigma", "2.0", "--shared-noise"] if method == "noise-inject" else []
    assert run_cli(interp_args(workspace, out, "--method", method, "--image", str(img), *extra)) == 0
    assert read_tensor(out).shape == (8, 8)
    assert img.read_bytes().startswith(b"P5")


def test_encode_decode_round_trip(workspace, tmp_path):
    mix = str(workspace / "mixture.json")
    assert run_cli(["encode", "--mixture", mix, "--input", str(workspace / "sample_0.pgm"),
                    "--output", str(tmp_path / "z.ndtn")]) == 0
    assert run_cli(["decode", "--mixture", mix, "--input", str(tmp_path / "z.ndtn"),
                    "--output", str(tmp_path / "x.ndtn"), "--image", str(tmp_path / "x.pgm")]) == 0
    x0 = np.frombuffer((workspace / "sample_0.pgm").read_bytes()[-64:], np.uint8).reshape(8, 8) / 255.0
    assert np.linalg.norm(read_tensor(tmp_path / "x.ndtn") - x0) / np.linalg.norm(x0) <= 1e-2


def test_train_and_use_checkpoint(workspace, tmp_path):
    ckpt = tmp_path / "net.ckpt"
    args = ["train-score", "--mixture", str(workspace / "mixture.json"), "--steps", "20", "--batch-size", "16",
            "--dataset-size", "64", "--seed", "3", "--output", str(ckpt)]
    assert run_cli(args) == 0
    first = ckpt.read_bytes()
    assert run_cli(args) == 0
    assert ckpt.read_bytes() == first
    assert read_checkpoint(ckpt).data_shape == (8, 8)
    assert run_cli(["encode", "--checkpoint", str(ckpt), "--n-steps", "8", "--input",
                    str(workspace / "sample_0.ndtn"), "--output", str(tmp_path / "z.ndtn")]) == 0


def test_train_from_data_file(tmp_path):
    write_tensor(tmp_path / "d.ndtn", make_rng(0).standard_normal((40, 2)))
    assert run_cli(["train-score", "--data", str(tmp_path / "d.ndtn"), "--steps", "5", "--batch-size", "8",
                    "--no-baseline", "--output", str(tmp_path / "n.ckpt")]) == 0
    assert read_checkpoint(tmp_path / "n.ckpt").baseline is False


def test_stats_empirical_rule_row(tmp_path, capsys):
    assert run_cli(["stats", "--suite", "empirical-rule", "--trials", "1000000", "--json",
                    str(tmp_path / "r.json"), "--csv", str(tmp_path / "r.csv")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())["reports"][0]
    assert abs(report["values"]["within_3sd"] - 0.9973) <= 0.002
    assert report["passed"]
    assert capsys.readouterr().out == (tmp_path / "r.csv").read_text()


def test_stats_all_suites_small(tmp_path, workspace):
    assert run_cli(["stats", "--trials", "200", "--n", "256", "--mixture", str(workspace / "mixture.json"),
                    "--denoise-level", "1.0", "--n-steps", "16", "--json", str(tmp_path / "s.json")]) == 0
    names = [r["name"] for r in json.loads((tmp_path / "s.json").read_text())["reports"]]
    assert names == ["norm_concentration", "orthogonality", "weighted_norm_ratio", "empirical_rule", "mismatch"]


def test_diagnose(tmp_path, capsys):
    write_tensor(tmp_path / "z.ndtn", 80.0 * make_rng(1).standard_normal(4096))
    assert run_cli(["diagnose", "--latent", str(tmp_path / "z.ndtn")]) == 0
    result = json.loads(capsys.readouterr().out)
    assert 0.97 <= result["ratio"] <= 1.03


def test_unknown_flag_is_usage_error(capsys):
    assert run_cli(["stats", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_command_is_usage_error():
    assert run_cli([]) == 1


def test_validation_error_exit_code(workspace, tmp_path, capsys):
    assert run_cli(interp_args(workspace, tmp_path / "o.ndtn", "--lambda", "1.5")) == 1
    assert "lambda" in capsys.readouterr().err
    assert not (tmp_path / "o.ndtn").exists()


def test_numerical_failure_exit_code(tmp_path):
    write_tensor(tmp_path / "d.ndtn", make_rng(0).standard_normal((64, 2)))
    assert run_cli(["train-score", "--data", str(tmp_path / "d.ndtn"), "--steps", "10", "--batch-size", "8",
                    "--lr", "1e200", "--output", str(tmp_path / "n.ckpt")]) == 2
    assert os.listdir(tmp_path) == ["d.ndtn"]


def test_env_seed_fallback(workspace, tmp_path, monkeypatch):
    monkeypatch.setenv("NOISEDIFF_SEED", "7")
    assert run_cli(interp_args(workspace, tmp_path / "env.ndtn")) == 0
    monkeypatch.delenv("NOISEDIFF_SEED")
    assert run_cli(interp_args(workspace, tmp_path / "flag.ndtn", "--seed", "7")) == 0
    assert (tmp_path / "env.ndtn").read_bytes() == (tmp_path / "flag.ndtn").read_bytes()


def test_config_file_with_flag_override(workspace, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"lambda": 0.0, "gamma": 0.0, "c": 1.0, "k": "inf", "seed": 3}))
    assert run_cli(interp_args(workspace, tmp_path / "c1.ndtn", "--config", str(cfg))) == 0
    assert run_cli(interp_args(workspace, tmp_path / "c2.ndtn", "--config", str(cfg), "--lambda", "1")) == 0
    a, b = read_tensor(workspace / "sample_0.ndtn"), read_tensor(workspace / "sample_1.ndtn")
    assert np.linalg.norm(read_tensor(tmp_path / "c1.ndtn") - a) <= 1e-2 * np.linalg.norm(a)
    # lambda = 1 with c = 1 puts all weight on image b
    assert np.linalg.norm(read_tensor(tmp_path / "c2.ndtn") - b) <= 1e-2 * np.linalg.norm(b)


def test_config_rejects_unknown_field(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"lamda": 0.5}')
    assert run_cli(["stats", "--suite", "norm", "--config", str(cfg)]) == 1
    assert "lamda" in capsys.readouterr().err


def test_gen_dataset_is_deterministic(tmp_path):
    for d in ("x", "y"):
        assert run_cli(["gen-dataset", "--out-dir", str(tmp_path / d), "--size", "4", "--samples", "1",
                        "--seed", "9"]) == 0
    for name in os.listdir(tmp_path / "x"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()
    assert math.isfinite(read_mixture(tmp_path / "x" / "mixture.json").delta)
