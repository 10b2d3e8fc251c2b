import json
import subprocess
import sys

import pytest

from ctssg.cli import main
from ctssg.config import ExperimentConfig


@pytest.fixture
def tiny_config(tmp_path):
    cfg = ExperimentConfig(name="cli").with_updates(
        encoder={"dim": 8},
        train={"max_steps": 2, "eval_every": 1, "warmup_steps": 1},
        data={"n_train": 4, "n_val": 4, "n_test": 4},
    )
    p = tmp_path / "cfg.json"
    p.write_text(cfg.to_json())
    return p


def test_gen_data_empty_and_repeatable(tmp_path, tiny_config):
    assert main(["gen-data", "--config", str(tiny_config), "--count", "0", "--out", str(tmp_path / "e")]) == 0
    doc = json.loads((tmp_path / "e" / "index.json").read_text())
    assert doc["count"] == 0 and doc["volumes"] == []

    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen-data", "--config", str(tiny_config), "--out", str(a)]) == 0
    assert main(["gen-data", "--config", str(tiny_config), "--out", str(b)]) == 0
    files = sorted(p.name for p in a.iterdir())
    assert len(files) == 13
    assert all((a / f).read_bytes() == (b / f).read_bytes() for f in files)


def test_gen_data_refuses_overwrite(tmp_path, tiny_config, capsys):
    out = str(tmp_path / "d")
    assert main(["gen-data", "--config", str(tiny_config), "--count", "1", "--out", out]) == 0
    assert main(["gen-data", "--config", str(tiny_config), "--count", "1", "--out", out]) == 2
    assert "--force" in capsys.readouterr().err
    assert main(["gen-data", "--config", str(tiny_config), "--count", "2", "--out", out, "--force"]) == 0


def test_invalid_config_names_the_invariant(tmp_path, capsys):
    doc = ExperimentConfig().to_dict()
    doc["encoder"]["n_labels"] = 7
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    assert main(["gen-data", "--config", str(p), "--out", str(tmp_path / "x")]) == 2
    assert "n_labels" in capsys.readouterr().err


def test_train_eval_robustness(tmp_path, tiny_config, capsys):
    run = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config), "--out", str(run)]) == 0
    assert main(["eval", "--checkpoint", str(run), "--out", str(tmp_path / "eval.json")]) == 0
    assert json.loads((tmp_path / "eval.json").read_text()) == json.loads((run / "report.json").read_text())["test"]
    assert main(["robustness", "--checkpoint", str(run), "--mode", "zshift", "--grid=-3,0,3", "--out", str(tmp_path / "rob")]) == 0
    lines = (tmp_path / "rob" / "robustness_zshift.csv").read_text().splitlines()
    assert lines[0] == "perturbation,macro_f1,auroc" and len(lines) == 4
    capsys.readouterr()
    assert main(["robustness", "--checkpoint", str(run), "--mode", "noise", "--grid", "0.5", "--out", str(tmp_path / "rob")]) == 2
    assert "0.5" in capsys.readouterr().err


def test_multi_seed_train_and_resume(tmp_path, tiny_config):
    run = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config), "--out", str(run), "--seeds", "3,4"]) == 0
    assert sorted(p.name for p in run.iterdir()) == ["seed_3", "seed_4"]
    assert main(["train", "--config", str(tiny_config), "--out", str(run / "seed_3"), "--seeds", "3", "--resume"]) == 0


def test_ablate_writes_csv(tmp_path, tiny_config):
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(tiny_config), "--axis", "operator", "--seeds", "0", "--out", str(out)]) == 0
    lines = (out / "ablate_operator.csv").read_text().splitlines()
    assert [l.split(",")[0] for l in lines[1:]] == ["chebyshev", "graph_conv"]


def test_unknown_axis_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["ablate", "--axis", "width", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_oracle_check_single_suite(capsys):
    assert main(["oracle-check", "--suite", "metrics"]) == 0
    assert capsys.readouterr().out.startswith("PASS metrics")


def test_help_lists_subcommands():
    out = subprocess.run([sys.executable, "-m", "ctssg.cli", "--help"], capture_output=True, text=True, check=True).stdout
    for cmd in ("gen-data", "train", "eval", "ablate", "robustness", "oracle-check"):
        assert cmd in out
