import json

import numpy as np
import pytest

from lfssd.config import ExperimentConfig, derive_seed, parse_override
from lfssd.errors import ConfigError
from lfssd.harness import (
    FILES,
    UnlearnReport,
    pick_plateau_alpha,
    read_report,
    read_table,
    run_experiment,
    sweep_alpha,
)

SMALL = {
    "model": {"hidden": [16]},
    "data": {"n_classes": 4, "n_per_class": 30, "n_features": 8, "test_per_class": 20},
    "train": {"epochs": 10},
    "mia": {"iterations": 300},
}


def small(tmp_path, **sections):
    raw = json.loads(json.dumps(SMALL))
    for k, v in sections.items():
        raw.setdefault(k, {})
        if isinstance(v, dict):
            raw[k].update(v)
        else:
            raw[k] = v
    raw["output_dir"] = str(tmp_path)
    return ExperimentConfig.from_dict(raw)


def test_config_defaults_and_seeds():
    a = ExperimentConfig.from_dict({})
    b = ExperimentConfig.from_dict({"seed": 1})
    assert a.tree["data"]["seed"] == derive_seed(0, "data")
    assert a.tree["data"]["seed"] != b.tree["data"]["seed"]
    assert a.tree["data"]["seed"] != a.tree["train"]["shuffle_seed"]
    pinned = ExperimentConfig.from_dict({"data": {"seed": 5}})
    assert pinned.tree["data"]["seed"] == 5


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="dampening.alpha"):
        ExperimentConfig.from_dict({"dampening": {"alpha": -1}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"train": {"epochz": 3}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"data": {"kind": "csv"}})
    with pytest.raises(ConfigError):
        parse_override("no-equals-sign")
    bad = tmp_path / "c.yaml"
    bad.write_text("- a list\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(bad)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(tmp_path / "missing.yaml")


def test_config_file_round_trip(tmp_path):
    cfg = ExperimentConfig.from_dict(SMALL, [("dampening.alpha", 7.5)])
    cfg.dump(tmp_path / "c.yaml")
    assert ExperimentConfig.from_file(tmp_path / "c.yaml").tree == cfg.tree


def test_run_is_deterministic_and_round_trips(tmp_path):
    a = run_experiment(small(tmp_path / "a"))
    b = run_experiment(small(tmp_path / "b"))
    ca, cb = a.canonical(), b.canonical()
    ca["config"].pop("output_dir")
    cb["config"].pop("output_dir")
    assert json.dumps(ca, sort_keys=True) == json.dumps(cb, sort_keys=True)

    back = read_report(tmp_path / "a" / FILES["report"])
    assert back.canonical_bytes() == a.canonical_bytes()
    table = read_table(tmp_path / "a" / FILES["table"])
    assert table == a.table_rows()
    for row in table:
        assert all(0.0 <= row[k] <= 100.0 for k in ("D_r", "D_f", "test", "MIA"))


def test_tampered_report_is_rejected(tmp_path):
    run_experiment(small(tmp_path))
    path = tmp_path / FILES["report"]
    d = json.loads(path.read_text())
    d["canonical"]["accuracies"]["unlearned"]["D_f"] = 42.0
    with pytest.raises(ValueError):
        UnlearnReport.from_dict(d)


def test_backward_pass_contract(tmp_path):
    first = run_experiment(small(tmp_path))
    D, Df = first.sizes["D"], first.sizes["D_f"]
    assert first.info["backward_passes"]["importance_full"] == D
    assert first.info["backward_passes"]["unlearn"] == Df
    assert first.info["importance_full_computed"]
    second = run_experiment(small(tmp_path))
    assert second.info["backward_passes"]["importance_full"] == 0
    assert second.info["backward_passes"]["unlearn"] == Df
    assert not second.info["importance_full_computed"]

    sweep = sweep_alpha(small(tmp_path / "s"), [1.0, 2.0, 4.0, 8.0], write=False)
    assert sweep.backward_passes["importance_full"] == D
    assert sweep.backward_passes["importance_forget"] == Df
    assert sweep.backward_passes["grid"] == 0
    assert [r["alpha"] for r in sweep.rows] == [1.0, 2.0, 4.0, 8.0]


def test_empty_random_split_fails_before_training(tmp_path):
    cfg = small(tmp_path, scenario={"rule": "random", "fraction": 1e-4})
    with pytest.raises(ConfigError) as info:
        run_experiment(cfg)
    assert info.value.stage == "data"
    assert not (tmp_path / FILES["baseline"]).exists()
    assert json.loads((tmp_path / FILES["partial"]).read_text())["failed_stage"] == "data"


@pytest.mark.parametrize("scenario", [
    {"rule": "sub_class", "class_id": 2},
    {"rule": "random", "fraction": 0.05},
])
def test_other_scenarios(tmp_path, scenario):
    data = {"subclasses_per_class": 2} if scenario["rule"] == "sub_class" else {}
    report = run_experiment(small(tmp_path, scenario=scenario, data=data))
    s = report.sizes
    assert s["D_f"] + s["D_r"] == s["D"] and s["D_f"] > 0
    if scenario["rule"] == "sub_class":
        assert s["label_source"] == "coarse" and s["layer_sizes"][-1] == 4


def test_csv_data_source(tmp_path):
    from lfssd.data import save_csv, sample_blobs_like, synthesize_blobs

    args = {"n_classes": 3, "n_per_class": 30, "n_features": 4, "separation": 6.0, "seed": 1,
            "subclasses_per_class": None}
    schema = save_csv(synthesize_blobs(**args), tmp_path / "train.csv")
    save_csv(sample_blobs_like(args, 10, 2), tmp_path / "test.csv")
    cfg = ExperimentConfig.from_dict({
        "output_dir": str(tmp_path / "out"),
        "model": {"hidden": [8]},
        "train": {"epochs": 5},
        "mia": {"iterations": 100},
        "data": {"kind": "csv", "path": str(tmp_path / "train.csv"), "test_path": str(tmp_path / "test.csv"),
                 "feature_columns": list(schema.feature_columns)},
    })
    report = run_experiment(cfg)
    assert report.sizes["D"] == 90 and report.sizes["D_f"] == 30


def test_sweep_grid_validation(tmp_path):
    cfg = small(tmp_path)
    for grid in ([], [2.0, 1.0], [0.0, 1.0]):
        with pytest.raises(ConfigError):
            sweep_alpha(cfg, grid, write=False)


def test_pick_plateau_alpha():
    rows = [{"alpha": a, "in_plateau": p} for a, p in
            [(1, False), (2, True), (3, False), (4, True), (5, True), (6, True), (7, False)]]
    assert pick_plateau_alpha(rows) == 5
    assert pick_plateau_alpha([{"alpha": 1, "in_plateau": False}]) is None


def test_sweep_writes_csv(tmp_path):
    res = sweep_alpha(small(tmp_path), [1.0, 3.0])
    rows = read_table(tmp_path / FILES["sweep"])
    assert [r["alpha"] for r in rows] == [1.0, 3.0]
    assert rows == res.rows
    assert np.isfinite([r["MIA"] for r in rows]).all()
