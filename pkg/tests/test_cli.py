import json
import subprocess
import sys

import pytest

from quadsec import cli, training

TINY = [
    "--set", "ppo.T=64", "--set", "ppo.N=2", "--set", "ppo.M=32", "--set", "ppo.K=2",
    "--set", "iterations=2", "--set", "eval.every=1", "--set", "eval.episodes=2",
    "--set", "env.horizon_s=1.0", "--set", "hidden=[8, 8]",
]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert cli.main(["train", "--seed", "1", "--output", str(out), *TINY]) == 0
    return out


def test_train_writes_artifacts(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"checkpoint.bin", "last.bin", "diagnostics.csv", "config.yaml", "manifest.json"} <= names


def test_seed_reproducibility(trained, tmp_path):
    assert cli.main(["train", "--seed", "1", "--output", str(tmp_path), *TINY]) == 0
    assert training.file_sha256(tmp_path / "checkpoint.bin") == training.file_sha256(trained / "checkpoint.bin")


def test_config_file_round_trip(trained, tmp_path):
    args = ["train", "--config", str(trained / "config.yaml"), "--seed", "1", "--output", str(tmp_path)]
    assert cli.main(args) == 0
    assert training.file_sha256(tmp_path / "checkpoint.bin") == training.file_sha256(trained / "checkpoint.bin")


def test_eval_writes_report(trained, tmp_path):
    args = ["eval", "--checkpoint", str(trained / "checkpoint.bin"), "--episodes", "2", "--output", str(tmp_path)]
    args += ["--set", "env.horizon_s=1.0", "--set", "hidden=[8, 8]"]
    assert cli.main(args) == 0
    report = json.loads((tmp_path / "eval.json").read_text())
    assert len(report["episodes"]) == 2 and 0.0 <= report["crash_rate"] <= 1.0


def test_eval_without_checkpoint_names_the_key(capsys):
    assert cli.main(["eval"]) == 1
    assert "checkpoint" in capsys.readouterr().err


def test_unknown_override_is_config_error(tmp_path, capsys):
    assert cli.main(["train", "--output", str(tmp_path), "--set", "ppo.gama=0.9"]) == 1
    assert "ppo.gama" in capsys.readouterr().err


def test_attacker_without_nominal_is_config_error(tmp_path):
    assert cli.main(["train", "--role", "attacker", "--output", str(tmp_path), *TINY]) == 1


def test_truncated_checkpoint_is_runtime_error(trained, tmp_path, capsys):
    bad = tmp_path / "bad.bin"
    bad.write_bytes((trained / "checkpoint.bin").read_bytes()[:-32])
    assert cli.main(["inspect", str(bad)]) == 2
    assert "checksum" in capsys.readouterr().err


def test_inspect(trained, capsys):
    assert cli.main(["inspect", str(trained / "checkpoint.bin")]) == 0
    out = capsys.readouterr().out
    assert "hidden [8, 8]" in out and "input_dim 18" in out and "seed 1" in out


def test_suite_smoke(trained, tmp_path):
    args = ["suite", "--nominal", str(trained / "checkpoint.bin"), "--scenario", "nominal,random"]
    assert cli.main([*args, "--repeats", "1", "--output", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary) == {"nominal", "random"} and len(summary["nominal"]) == 6
    assert "optimal_vs_random" not in json.loads((tmp_path / "comparison.json").read_text())


def test_help_lists_config_keys():
    out = subprocess.run([sys.executable, "-m", "quadsec", "train", "--help"], capture_output=True, text=True, check=True).stdout
    for key in ("ppo.gamma", "ppo.lr", "env.horizon_s", "reward.Q", "frozen.nominal", "eval.patience"):
        assert key in out
