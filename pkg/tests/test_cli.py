"""End-to-end command-line behaviour: artifacts, reproducibility, exit
codes.  Everything runs in-process through main() on tiny datasets."""

import json
import os

import pytest

from frematch import cli
from frematch import propcheck

TINY = ["--set", "dataset.n=200", "--set", "epochs=1"]


def _one_run_dir(root):
    dirs = [d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))]
    assert len(dirs) == 1, dirs
    return os.path.join(root, dirs[0])


# ---------------------------------------------------------------------------
# usage errors -> exit 1


def test_missing_config_file(tmp_path, capsys):
    rc = cli.main(["train", "--config", str(tmp_path / "nope.txt")])
    assert rc == 1
    assert "config file not found" in capsys.readouterr().err


def test_unknown_override_key(tmp_path, capsys):
    rc = cli.main(["train", "--out", str(tmp_path), "--set", "bogus=1"])
    assert rc == 1
    assert "unknown config key 'bogus'" in capsys.readouterr().err


def test_bad_flag_exits_one_not_two(capsys):
    rc = cli.main(["train", "--no-such-flag"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_ablate_needs_three_seeds(tmp_path, capsys):
    rc = cli.main(["ablate", "--out", str(tmp_path), "--seeds", "0,1"])
    assert rc == 1
    assert ">= 3 seeds" in capsys.readouterr().err


def test_ablate_rejects_unknown_mode(tmp_path, capsys):
    rc = cli.main(["ablate", "--out", str(tmp_path), "--modes", "frematch,warp"])
    assert rc == 1
    assert "unknown mode 'warp'" in capsys.readouterr().err


def test_sweep_rejects_unsweepable_param(tmp_path, capsys):
    rc = cli.main(["sweep", "--out", str(tmp_path), "--param", "epochs",
                   "--values", "1,2"])
    assert rc == 1
    assert "cannot sweep 'epochs'" in capsys.readouterr().err


def test_sweep_rejects_non_numeric_value(tmp_path, capsys):
    rc = cli.main(["sweep", "--out", str(tmp_path), "--param", "eta",
                   "--values", "0.9,high"])
    assert rc == 1
    assert "non-numeric sweep value 'high'" in capsys.readouterr().err


def test_eval_missing_checkpoint(tmp_path, capsys):
    rc = cli.main(["eval", "--out", str(tmp_path),
                   "--checkpoint", str(tmp_path / "absent.bin")])
    assert rc == 1
    assert "checkpoint not found" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# train


def test_train_writes_artifacts(tmp_path, capsys):
    out = str(tmp_path / "runs")
    rc = cli.main(["train", "--out", out, *TINY])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "final test error (empirical model):" in stdout

    run_dir = _one_run_dir(out)
    assert os.path.basename(run_dir).endswith("-frematch-seed0")
    for name in ("config.txt", "manifest.json", "metrics.csv", "checkpoint.bin"):
        assert os.path.exists(os.path.join(run_dir, name)), name

    lines = open(os.path.join(run_dir, "metrics.csv")).read().splitlines()
    assert lines[0].startswith("epoch,iter,")
    assert len(lines) == 3  # header + initial state + one trained epoch


def test_train_manifest_records_defaults(tmp_path):
    out = str(tmp_path / "runs")
    assert cli.main(["train", "--out", out, *TINY]) == 0
    manifest = json.loads(
        open(os.path.join(_one_run_dir(out), "manifest.json")).read())
    snap = manifest["config"]
    assert snap["lambda"] == 20.0
    assert snap["eta"] == 0.95
    assert snap["m"] == 0.9
    assert snap["beta"] == 1.0
    assert snap["epochs"] == 1
    assert manifest["finished"] is not None
    assert manifest["outputs"]["metrics"] == "metrics.csv"


def test_train_seed_flag_wins_over_config(tmp_path):
    out = str(tmp_path / "runs")
    assert cli.main(["train", "--out", out, "--seed", "5",
                     "--set", "seed=1", *TINY]) == 0
    run_dir = _one_run_dir(out)
    assert run_dir.endswith("seed5")
    snap = json.loads(open(os.path.join(run_dir, "manifest.json")).read())
    assert snap["config"]["seed"] == 5


def test_rerunning_saved_config_reproduces_metrics(tmp_path):
    first_out = str(tmp_path / "a")
    assert cli.main(["train", "--out", first_out, *TINY]) == 0
    first_dir = _one_run_dir(first_out)

    second_out = str(tmp_path / "b")
    assert cli.main(["train", "--out", second_out, "--config",
                     os.path.join(first_dir, "config.txt")]) == 0
    second_dir = _one_run_dir(second_out)

    first = open(os.path.join(first_dir, "metrics.csv"), "rb").read()
    second = open(os.path.join(second_dir, "metrics.csv"), "rb").read()
    assert first == second


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # the overflow IS the test
def test_train_abort_exits_two(tmp_path, capsys):
    out = str(tmp_path / "runs")
    rc = cli.main(["train", "--out", out, "--set", "dataset.n=200",
                   "--set", "epochs=2", "--set", "mode=supervised",
                   "--set", "lr0=1e14"])
    assert rc == 2
    assert "aborted:" in capsys.readouterr().err
    # manifest still closed out, metrics keeps the rows written so far
    run_dir = _one_run_dir(out)
    manifest = json.loads(open(os.path.join(run_dir, "manifest.json")).read())
    assert manifest["finished"] is not None
    assert os.path.exists(os.path.join(run_dir, "metrics.csv"))


def test_run_dir_collision_gets_suffix(tmp_path, monkeypatch):
    monkeypatch.setattr(cli.time, "strftime", lambda fmt: "20260101-000000")
    first = cli._make_run_dir(str(tmp_path), "frematch", 0)
    second = cli._make_run_dir(str(tmp_path), "frematch", 0)
    assert first.endswith("20260101-000000-frematch-seed0")
    assert second.endswith("20260101-000000-frematch-seed0-2")


# ---------------------------------------------------------------------------
# ablate / sweep


def test_ablate_writes_summary_table(tmp_path, capsys):
    out = str(tmp_path / "runs")
    rc = cli.main(["ablate", "--out", out, *TINY,
                   "--modes", "supervised,frematch", "--seeds", "0,1,2",
                   "--parallel", "2"])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "mode,median,min,max,runs,failed" in stdout

    tables = [f for f in os.listdir(out) if f.startswith("ablation-")]
    assert len(tables) == 1
    lines = open(os.path.join(out, tables[0])).read().splitlines()
    assert lines[0] == "mode,median,min,max,runs,failed"
    assert lines[1].startswith("supervised,")
    assert lines[2].startswith("frematch,")
    assert all(line.endswith(",3,0") for line in lines[1:])

    run_dirs = [d for d in os.listdir(out)
                if os.path.isdir(os.path.join(out, d))]
    assert len(run_dirs) == 6


def test_sweep_writes_summary_table(tmp_path, capsys):
    out = str(tmp_path / "runs")
    rc = cli.main(["sweep", "--out", out, *TINY, "--param", "lambda",
                   "--values", "0,20", "--seeds", "0,1", "--parallel", "2"])
    assert rc == 0
    capsys.readouterr()

    tables = [f for f in os.listdir(out) if f.startswith("sweep-lambda-")]
    assert len(tables) == 1
    lines = open(os.path.join(out, tables[0])).read().splitlines()
    assert lines[0] == "lambda,median,min,max,runs,failed"
    assert lines[1].startswith("0,")
    assert lines[2].startswith("20,")


# ---------------------------------------------------------------------------
# eval / propcheck


def test_eval_scores_saved_checkpoint(tmp_path, capsys):
    out = str(tmp_path / "runs")
    assert cli.main(["train", "--out", out, *TINY]) == 0
    run_dir = _one_run_dir(out)
    capsys.readouterr()

    rc = cli.main(["eval", "--out", out, *TINY,
                   "--checkpoint", os.path.join(run_dir, "checkpoint.bin")])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "test error basic:" in stdout
    assert "test error empirical:" in stdout


def test_propcheck_green_exits_zero(capsys):
    rc = cli.main(["propcheck"])
    assert rc == 0
    stdout = capsys.readouterr().out
    n = len(propcheck.ALL_CHECKS)
    assert f"{n}/{n} properties passed" in stdout


def test_propcheck_failure_exits_three(monkeypatch, capsys):
    monkeypatch.setattr(
        propcheck, "run_all",
        lambda seed=0: [propcheck.PropResult("broken-thing", False, "nope")])
    rc = cli.main(["propcheck"])
    assert rc == 3
    assert "FAIL  broken-thing" in capsys.readouterr().out
