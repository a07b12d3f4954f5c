import json
import os
from pathlib import Path

import pytest
import yaml

from bochner.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from bochner.config import ExperimentConfig, apply_override
from bochner.errors import ConfigInvalid

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SMOKE = CONFIGS / "smoke.yaml"


def smoke_dict():
    return yaml.safe_load(SMOKE.read_text())


# -- configuration -------------------------------------------------------------------


def test_smoke_config_loads():
    cfg = ExperimentConfig.load(SMOKE)
    assert cfg.task == "compare" and cfg.ladder == (2,)
    assert cfg.grid_points == 16
    assert cfg.centers == ((0.5, 0.5),)


def test_alpha_out_of_range_names_alpha():
    data = smoke_dict()
    data["alpha"] = 0.7
    with pytest.raises(ConfigInvalid) as info:
        ExperimentConfig.from_dict(data)
    assert info.value.path == "alpha"


@pytest.mark.parametrize(
    "key, value, path",
    [
        ("eta", 0.0, "eta"),
        ("ladder", [], "ladder"),
        ("ladder", [2, 2], "ladder"),
        ("task", "plot", "task"),
        ("epsilon", -1, "epsilon"),
        ("bogus", 1, "bogus"),
        ("grid", 3, "grid"),
    ],
)
def test_invalid_fields(key, value, path):
    data = smoke_dict()
    data[key] = value
    with pytest.raises(ConfigInvalid) as info:
        ExperimentConfig.from_dict(data)
    assert info.value.path == path


def test_unquantized_field_is_a_config_error_only_at_run_time(tmp_path):
    # the flux gate belongs to the numerics, so loading succeeds
    data = smoke_dict()
    data["field"]["constant"][0]["value"] = 1.0
    cfg = ExperimentConfig.from_dict(data)
    assert cfg.spec.constant[(0, 1)] == 1.0


def test_task_section_errors_carry_the_section():
    data = smoke_dict()
    data["task"] = "fit"
    data["ladder"] = [2, 4, 8, 16, 32]
    data["fit"] = {"ladder": [2, 4]}
    with pytest.raises(ConfigInvalid) as info:
        ExperimentConfig.from_dict(data)
    assert info.value.path == "fit.ladder"


def test_task_section_overrides():
    data = smoke_dict()
    data["agmon"] = {"eta": 0.1, "ladder": [4, 8]}
    cfg = ExperimentConfig.from_dict(data)
    sub = cfg.for_task("agmon")
    assert sub.eta == 0.1 and sub.ladder == (4, 8)
    assert cfg.for_task("compare").ladder == (2,)


def test_override_parsing():
    data = apply_override({"solver": {"tol": 1e-9}}, "solver.tol=1e-11")
    assert float(data["solver"]["tol"]) == 1e-11
    cfg = ExperimentConfig.load(SMOKE, ["solver.tol=1e-11"])
    assert cfg.tol == 1e-11 and cfg.raw["solver"]["tol"] == 1e-11
    assert apply_override({}, "ladder=[1, 2]")["ladder"] == [1, 2]
    with pytest.raises(ConfigInvalid):
        apply_override({}, "no-equals-sign")


def test_hash_ignores_output_and_threads():
    base = ExperimentConfig.load(SMOKE)
    moved = ExperimentConfig.load(SMOKE, ["output=/elsewhere", "threads=4"])
    assert base.hash() == moved.hash()
    for item in ["seed=1", "eta=0.5", "solver.tol=1e-10", "ladder=[2, 3]"]:
        assert ExperimentConfig.load(SMOKE, [item]).hash() != base.hash()


# -- runs -------------------------------------------------------------------------------


def run(tmp_path, *extra):
    out = tmp_path / "out"
    code = main(["--config", str(SMOKE), "--out", str(out), *extra])
    manifest = json.loads((out / "manifest.json").read_text()) if (out / "manifest.json").exists() else None
    return code, out, manifest


def test_smoke_run(tmp_path):
    code, out, manifest = run(tmp_path)
    assert code == EXIT_OK
    assert manifest["status"] == "OK"
    assert len(manifest["files"]) == 3
    for name in manifest["files"]:
        assert (out / name).is_file()
    assert manifest["grids"] == {"compare:p=2": [16, 16]}
    assert len(manifest["config_hash"]) == 64
    assert "total" in manifest["timings"]


def test_smoke_is_byte_identical(tmp_path):
    _, a, ma = run(tmp_path / "a")
    _, b, mb = run(tmp_path / "b", "--threads", "2")
    for name in ma["files"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert ma["config_hash"] == mb["config_hash"]


def test_bad_alpha_exit_code(tmp_path, capsys):
    code, _, manifest = run(tmp_path, "--override", "alpha=0.7")
    assert code == EXIT_CONFIG
    assert manifest is None
    assert "alpha" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["--config", str(tmp_path / "none.yaml")]) == EXIT_CONFIG


def test_numerical_failure_marks_manifest(tmp_path):
    code, out, manifest = run(tmp_path, "--override", "field.constant=[{plane: [0, 1], value: 1.0}]")
    assert code == EXIT_NUMERIC
    assert manifest["status"] == "FAILED"
    assert manifest["failed"]["stage"] == "geometry"
    assert "NotPrequantized" in manifest["failed"]["error"]


def test_partial_outputs_kept(tmp_path):
    # the first power succeeds, the second cannot resolve its grid
    code, out, manifest = run(
        tmp_path, "--override", "ladder=[2, 400]", "--override", "solver.max_count=64"
    )
    assert code == EXIT_CONFIG
    assert manifest["status"] == "FAILED"
    assert manifest["files"] == ["compare_p2_torus.csv", "compare_p2_patch1.csv", "compare_p2.csv"]


def test_task_flag_selects_task(tmp_path):
    code, out, manifest = run(
        tmp_path, "--task", "weyl", "--override", "eta_units=absolute", "--override", "eta=1.0"
    )
    assert code == EXIT_OK
    assert manifest["tasks"] == ["weyl"]
    weyl = json.loads((out / "weyl.json").read_text())
    # constant field: one Landau level below (2pi + 1) * 2, holding p = 2 states
    assert weyl[0]["measured"] == 2
    assert weyl[0]["predicted"]["2n+1"] == pytest.approx(2.0)
    assert weyl[0]["best_convention"] == "2n+1"


def test_module_entry_point(tmp_path):
    import subprocess
    import sys

    out = tmp_path / "m"
    proc = subprocess.run(
        [sys.executable, "-m", "bochner", "--config", str(SMOKE), "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert os.path.exists(out / "manifest.json")
