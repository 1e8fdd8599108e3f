import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import chain
from tmd.cli import main
from tmd.distance import DistanceTable
from tmd.oracle import d_sd_star

TINY = {
    "environment": {"preset": "open7"},
    "dataset": {"path": "data.jsonl", "behavior": "region-confined-walk", "regions": "quadrants7",
                "n_trajectories": 40, "trajectory_len": 5},
    "eval": {"tasks": "quadrant-cross", "horizon": 24, "episodes": 3},
    "train": {"steps": 6, "log_every": 2, "out_dir": "run", "train_policy": True},
    "model": {"hidden": [8], "policy_hidden": [8]},
    "tmd": {"batch_size": 8},
    "ablate": {"seeds": [0, 1], "variants": ["full", "no-nce"]},
}


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


def test_train_then_eval(cfg_path, tmp_path, capsys):
    assert main(["gen-data", str(cfg_path)]) == 0
    assert (tmp_path / "data.jsonl").is_file()
    assert main(["train", str(cfg_path)]) == 0
    run = tmp_path / "run"
    for name in ("metrics.csv", "checkpoint.npz", "eval.json", "metrics.png", "policy.png"):
        assert (run / name).is_file(), name
    assert main(["eval", str(run / "checkpoint.npz"), str(cfg_path)]) == 0
    report = json.loads((run / "checkpoint.eval.json").read_text())
    assert report == json.loads((run / "eval.json").read_text())
    assert "success" in capsys.readouterr().out


def test_train_resume_flag(cfg_path, tmp_path):
    main(["gen-data", str(cfg_path)])
    assert main(["train", str(cfg_path), "--out", str(tmp_path / "a")]) == 0
    assert main(["train", str(cfg_path), "--resume", str(tmp_path / "a" / "checkpoint.npz"),
                 "--out", str(tmp_path / "a")]) == 0


def test_train_without_data_fails_cleanly(cfg_path, capsys):
    assert main(["train", str(cfg_path)]) == 2
    assert "gen-data" in capsys.readouterr().err


def test_missing_and_invalid_configs(tmp_path, capsys):
    assert main(["train", str(tmp_path / "nope.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"tmd": {"zeta": 0.1, "typo": 1}}))
    assert main(["gen-data", str(bad)]) == 2
    assert "typo" in capsys.readouterr().err


def test_ablate(cfg_path, tmp_path, capsys):
    main(["gen-data", str(cfg_path)])
    assert main(["ablate", str(cfg_path), "--out", str(tmp_path / "abl")]) == 0
    for name in ("ablation.csv", "ablation.json", "ablation.png"):
        assert (tmp_path / "abl" / name).is_file()
    out = capsys.readouterr().out
    assert "no-nce" in out and "full" in out


def test_oracle_dumps_both_tables(tmp_path, capsys):
    mdp = chain(4)
    mdp.save(tmp_path / "chain.json")
    behavior = tmp_path / "beta.json"
    behavior.write_text(json.dumps([[0.5, 0.5]] * 4))
    assert main(["oracle", str(tmp_path / "chain.json"), "--behavior", str(behavior), "--out", str(tmp_path / "o")]) == 0
    star = DistanceTable.load(tmp_path / "o" / "d_star")
    np.testing.assert_array_equal(star.values, d_sd_star(mdp).values)
    for name in ("d_star.png", "d_beta.png", "d_beta.csv"):
        assert (tmp_path / "o" / name).is_file()
    assert "quasimetric: True" in capsys.readouterr().out


def test_oracle_rejects_bad_mdp(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"transition": [[[0.5, 0.2]]], "gamma": 0.9}))
    assert main(["oracle", str(tmp_path / "m.json")]) == 2


def test_verify_divergence(capsys):
    assert main(["verify", "divergence"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "1/1" in out


def test_verify_failure_exit_code(monkeypatch):
    from tmd import verify

    monkeypatch.setattr(verify, "check_divergence_minimizer", lambda: (False, "forced"))
    assert main(["verify", "divergence"]) == 1


def test_unknown_suite_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["verify", "everything"])
    assert exc.value.code == 2


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tmd.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("train", "eval", "verify", "ablate", "oracle", "gen-data"):
        assert sub in proc.stdout
