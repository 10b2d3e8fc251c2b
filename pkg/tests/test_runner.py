import json

import numpy as np
import pytest

from ctssg import runner
from ctssg.checkpoint import load_checkpoint, save_checkpoint
from ctssg.config import ExperimentConfig
from ctssg.errors import CheckpointError, ValidationError
from ctssg.graph import edge_count
from ctssg.model import CTSSG

TINY = ExperimentConfig(name="tiny").with_updates(
    encoder={"dim": 8},
    train={"max_steps": 4, "eval_every": 2, "warmup_steps": 1},
    data={"n_train": 8, "n_val": 8, "n_test": 8},
)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    runner.run_train(TINY, out, seed=0)
    return out


def test_run_layout(trained):
    names = sorted(p.name for p in trained.iterdir())
    assert names == ["checkpoint", "config.json", "history.csv", "last", "report.json"]
    rep = json.loads((trained / "report.json").read_text())
    assert rep["steps"] == 4 and rep["n_params"] == CTSSG(TINY.encoder, TINY.graph_configs()).n_parameters()
    assert ExperimentConfig.load(trained / "config.json").train.seed == 0


def test_refuses_to_overwrite(trained):
    with pytest.raises(ValidationError, match="--force"):
        runner.run_train(TINY, trained, seed=0)


def test_checkpoint_hash_mismatch(tmp_path):
    model = CTSSG(TINY.encoder, TINY.graph_configs())
    save_checkpoint(tmp_path / "c", model)
    other = CTSSG(TINY.encoder, TINY.with_updates(graph={"q": 3}).graph_configs())
    with pytest.raises(CheckpointError, match="hash"):
        load_checkpoint(tmp_path / "c", other)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing", model)


def test_eval_reproduces_report(trained):
    rep = runner.run_eval(trained)
    assert rep.to_dict() == json.loads((trained / "report.json").read_text())["test"]


def test_eval_with_foreign_config_fails(trained):
    with pytest.raises(CheckpointError):
        runner.run_eval(trained, TINY.with_updates(encoder={"cheb_order": 2}))


@pytest.mark.parametrize("mode", ["zshift", "noise"])
def test_zero_perturbation_equals_clean(trained, mode):
    rows, clean = runner.run_robustness(trained, mode, [0])
    assert rows[0]["macro_f1"] == clean.macro_f1 or (np.isnan(clean.macro_f1) and np.isnan(rows[0]["macro_f1"]))
    assert rows[0]["auroc"] == clean.auroc


def test_default_grids():
    assert runner.default_grid("zshift", 24) == [-3, -2, 0, 2, 3]
    assert runner.default_grid("zshift", 240) == [-30, -15, 0, 15, 30]
    assert runner.default_grid("noise", 24) == [0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07]


@pytest.mark.parametrize(
    "mode, grid",
    [("zshift", [31]), ("zshift", [24]), ("zshift", [1.5]), ("noise", [0.08]), ("noise", [0.005]), ("noise", [-0.01])],
)
def test_grid_outside_protocol_rejected(mode, grid):
    with pytest.raises(ValidationError):
        runner.check_grid(mode, grid, 24)


def test_full_shift_grid_accepted_on_deep_volumes():
    assert runner.check_grid("zshift", [-30, -15, 0, 15, 30], 48) == [-30, -15, 0, 15, 30]
    assert len(runner.check_grid("noise", [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07], 24)) == 7


def test_noise_is_keyed_by_volume_index():
    v = np.full((3, 6, 2, 2), 0.5)
    a = runner.perturb(v, [5, 6, 7], "noise", 0.03, noise_seed=1)
    b = runner.perturb(v[1:], [6, 7], "noise", 0.03, noise_seed=1)
    np.testing.assert_array_equal(a[1:], b)


@pytest.mark.parametrize(
    "axis, value, check",
    [
        ("K", "5", lambda c: c.encoder.cheb_order == 5),
        ("L", "3", lambda c: c.encoder.depth == 3 and len(c.graph_configs()) == 3),
        ("q", "4", lambda c: c.graph.q == 4),
        ("operator", "graph_conv", lambda c: c.encoder.operator == "graph_conv"),
        ("topology", "fully_connected", lambda c: c.graph_configs()[0].effective_q == 7),
        ("components", "no_positional", lambda c: not c.encoder.use_positional),
        ("components", "unit_weights", lambda c: not c.graph.weighted),
        ("components", "no_residual", lambda c: not c.encoder.use_residual),
        ("components", "no_layernorm", lambda c: not c.encoder.use_layernorm),
        ("components", "full", lambda c: c == TINY),
    ],
)
def test_ablation_toggles(axis, value, check):
    assert check(runner.ablation_config(TINY, axis, value))


def test_ablation_rejects_bad_values():
    for axis, value in [("K", "three"), ("components", "no_head"), ("topology", "ring"), ("depth", "1")]:
        with pytest.raises(ValidationError):
            runner.ablation_config(TINY, axis, value)


def test_ablation_rows_and_edge_counts():
    rows = runner.run_ablate(TINY, "topology", seeds=[0, 1])
    assert [(r["axis_value"], r["seed"]) for r in rows] == [("sparse", 0), ("sparse", 1), ("fully_connected", 0), ("fully_connected", 1)]
    assert rows[0]["n_edges"] == edge_count(8, 2) == 13
    assert rows[2]["n_edges"] == edge_count(8, 7) == 28
    text = runner.rows_csv(rows, runner.ABLATION_COLUMNS)
    assert text.splitlines()[0] == "axis_value,seed,macro_f1,auroc,map,accuracy,n_params,n_edges"


def test_parallel_sweep_matches_serial():
    serial = runner.run_ablate(TINY, "K", ["1", "2"], seeds=[0])
    parallel = runner.run_ablate(TINY, "K", ["1", "2"], seeds=[0], threads=2)
    assert runner.rows_csv(serial, runner.ABLATION_COLUMNS) == runner.rows_csv(parallel, runner.ABLATION_COLUMNS)


def test_splits_from_disk_match_generated(tmp_path):
    from ctssg.synth import generate, save_dataset

    save_dataset(generate(TINY.synth, 24), tmp_path, TINY.synth)
    a, b = runner.make_splits(TINY), runner.make_splits(TINY, tmp_path)
    for part in ("train", "val", "test"):
        np.testing.assert_array_equal(getattr(a, part).volumes, getattr(b, part).volumes)
    with pytest.raises(ValidationError, match="needs"):
        runner.make_splits(TINY.with_updates(data={"n_train": 100}), tmp_path)
