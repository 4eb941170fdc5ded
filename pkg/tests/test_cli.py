import csv
import json
import math

import pytest

from anosovlab.cli import (ExperimentConfig, main, read_csv, run_pipeline, sha256,
                           validate_config, write_csv)
from anosovlab.errors import ConfigError, StageError
from anosovlab.plots import Plot, Series, render_svg

FAST = {"T": 20.0, "n_orbits": 16, "T_burn": 2.0}


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="unknown config key 'spec.lvl'"):
        validate_config({"spec": {"kind": "geodesic", "lvl": 2}})
    with pytest.raises(ConfigError, match="unknown config key 'budget'"):
        ExperimentConfig.from_dict({"budget": {}})


def test_bad_values_are_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"riccati": {"T_relax": 5}})
    bad = tmp_path / "c.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(bad)


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"spec": {"kind": "geodesic", "lvl": 2}}))
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2
    assert "spec.lvl" in capsys.readouterr().err


def test_presets_merge_over_defaults():
    cfg = ExperimentConfig.from_dict({"preset": "quasi-fuchsian", "spec": {"scale": 0.3}})
    assert cfg.spec["kind"] == "quasi-fuchsian" and cfg.spec["scale"] == 0.3
    assert cfg.budgets["n_orbits"] == 128 and "resonant" in cfg.stages


def test_csv_keeps_17_digits(tmp_path):
    path = write_csv(tmp_path / "x.csv", ["a", "b", "c"], [{"a": math.pi, "b": 3, "c": True}])
    row = read_csv(path)[0]
    assert float(row["a"]) == math.pi
    assert row["b"] == "3" and row["c"] == "true"
    assert path.read_bytes().count(b"\r") == 0


def test_svg_with_no_data_is_empty_axes():
    svg = render_svg(Plot("empty", "x", "y", series=[Series("nothing", [], [])]))
    assert svg.startswith("<svg") and "<path" not in svg and "<circle" not in svg


def test_svg_is_deterministic_and_drops_nonpositive_on_log_axes():
    plot = Plot("t", "x", "y", logy=True,
                series=[Series("s", [1, 2, 3], [1e-3, 0.0, 1e-1], [1e-4, 0, 1e-2], "both")])
    a, b = render_svg(plot), render_svg(plot)
    assert a == b
    assert a.count("<circle") == 2


def test_manifest_records_hashes(tmp_path):
    cfg = {"spec": {"kind": "geodesic", "level": 1}, "stages": ["srb"], "budgets": FAST}
    bundle = run_pipeline(cfg, tmp_path)
    manifest = json.loads(bundle.manifest.read_text())
    names = {f["name"] for f in manifest["files"]}
    assert {"srb.csv", "summary.json"} <= names
    for f in manifest["files"]:
        assert f["sha256"] == sha256(tmp_path / f["name"])
    assert manifest["seeds"]["orbits"] == 0
    assert manifest["config"]["budgets"]["T"] == 20.0


def test_geodesic_baseline_run(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"preset": "geodesic-baseline", "spec": {"level": 1},
                               "budgets": FAST, "helicity": {"n_a": 8}}))
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "out")]) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["classify"]["m10"] == 4 and summary["classify"]["ruelle_order"] == 2
    assert summary["helicity"]["value"] == pytest.approx(1 / (8 * math.pi ** 2), rel=1e-12)
    assert (tmp_path / "out" / "winding.svg").exists()


def test_stage_failures_name_the_stage(tmp_path):
    cfg = {"spec": {"kind": "gaussian", "level": 1, "coefficients": [0.3, 0, 0, 0]},
           "stages": ["helicity"], "budgets": FAST}
    with pytest.raises(StageError) as info:
        run_pipeline(cfg, tmp_path)
    assert info.value.stage == "helicity"
    assert str(info.value).startswith("stage 'helicity': ValueError")


def test_outputs_do_not_depend_on_worker_count(tmp_path, monkeypatch):
    cfg = {"spec": {"kind": "gaussian", "level": 1, "coefficients": [0.3, 0, 0, 0]},
           "stages": ["winding", "srb"], "budgets": {"T": 5.0, "n_orbits": 80, "T_burn": 1.0}}
    out = {}
    for workers in ("1", "3"):
        monkeypatch.setenv("ANOSOVLAB_WORKERS", workers)
        out[workers] = run_pipeline(cfg, tmp_path / workers).out_dir
    for name in ("winding.csv", "srb.csv", "winding.svg"):
        assert (out["1"] / name).read_bytes() == (out["3"] / name).read_bytes()


def test_classify_command(tmp_path, capsys):
    assert main(["classify", "--wplus", "zero", "--wminus", "zero", "--helicity", "nonzero",
                 "--out-dir", str(tmp_path)]) == 0
    row = json.loads(capsys.readouterr().out)
    assert (row["m10"], row["m1"], row["ruelle_order"]) == (4, 5, 2)
    assert main(["classify", "--wplus", "nonzero", "--wminus", "zero", "--helicity", "zero",
                 "--out-dir", str(tmp_path)]) == 1


def test_suspension_command(tmp_path, capsys):
    assert main(["suspension", "--n-max", "4", "--out-dir", str(tmp_path)]) == 0
    with open(tmp_path / "suspension.csv", newline="") as fh:
        counts = [int(r["fixed_points"]) for r in csv.DictReader(fh)]
    assert counts == [1, 5, 16, 45]
    assert json.loads(capsys.readouterr().out)["ruelle_order"] == -2


def test_zeta_and_orbit_commands(tmp_path, capsys):
    assert main(["zeta", "--s", "2", "--L", "5", "--out-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "zeta.csv")
    assert [int(r["n_orbits"]) for r in rows] == [24, 48]
    assert main(["orbits", "--max-length", "3.1", "--out-dir", str(tmp_path)]) == 0
    assert len(json.loads((tmp_path / "classes.json").read_text())) == 24
