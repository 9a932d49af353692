import json

import numpy as np
import pytest

from trackctl.cli import (
    EXIT_IO,
    EXIT_OK,
    EXIT_PARSE,
    EXIT_VALIDATION,
    PRESETS,
    load_scenario,
    main,
)
from trackctl.scenario import scenario_from_dict, scenario_to_dict


def tiny_doc(steps=10):
    return {
        "schema_version": 1,
        "d": 2,
        "dt": 1.0,
        "steps": steps,
        "k": 2,
        "a_max": 5.0,
        "u_max": 2.0,
        "solver_iters": 3,
        "box": {
            "s_min": [0.0, 0.0, -9.5, -9.5],
            "s_max": [1000.0, 1000.0, 9.5, 9.5],
        },
        "sensors": [
            {"state": [420.0, 430.0, 0.0, 0.0], "model": {"kind": "ranging"}},
            {"state": [520.0, 400.0, 0.0, 0.0], "model": {"kind": "ranging"}},
            {"state": [470.0, 530.0, 0.0, 0.0], "model": {"kind": "ranging"}},
        ],
        "targets": [
            {
                "state": [450.0, 480.0, -6.0, 4.0],
                "accel": {"kind": "constant", "a": [1.0, -0.5]},
            }
        ],
    }


@pytest.fixture
def tiny_scenario_path(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(tiny_doc()))
    return str(path)


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def test_run_writes_deterministic_csv(tiny_scenario_path, tmp_path):
    out1 = str(tmp_path / "a.csv")
    out2 = str(tmp_path / "b.csv")
    args = ["run", "--scenario", tiny_scenario_path, "--seed", "7", "--quiet"]
    assert main(args + ["--out", out1]) == EXIT_OK
    assert main(args + ["--out", out2]) == EXIT_OK
    assert read(out1) == read(out2)


def test_run_csv_schema(tiny_scenario_path, tmp_path):
    out = str(tmp_path / "trace.csv")
    assert main(
        ["run", "--scenario", tiny_scenario_path, "--seed", "1", "--out", out, "--quiet"]
    ) == EXIT_OK
    lines = open(out).read().splitlines()
    header = lines[0].split(",")
    d, M = 2, 3
    assert len(header) == 2 + 2 * 2 * d + 3 + M * (2 * d + d)
    assert header[:2] == ["t", "target_id"]
    assert header[2:6] == ["true_px", "true_py", "true_vx", "true_vy"]
    assert header[6:10] == ["est_px", "est_py", "est_vx", "est_vy"]
    assert header[10:13] == ["pos_err_m", "vel_err_mps", "crb_ref"]
    assert header[13:19] == [
        "sensor0_px",
        "sensor0_py",
        "sensor0_vx",
        "sensor0_vy",
        "sensor0_ux",
        "sensor0_uy",
    ]
    assert len(lines) == 1 + 10  # header + steps * targets
    for line in lines[1:]:
        assert len(line.split(",")) == len(header)


def test_run_mode_override_changes_output(tiny_scenario_path, tmp_path):
    out_r = str(tmp_path / "r.csv")
    out_p = str(tmp_path / "p.csv")
    base = ["run", "--scenario", tiny_scenario_path, "--seed", "3", "--quiet"]
    assert main(base + ["--out", out_r, "--mode", "robust"]) == EXIT_OK
    assert main(base + ["--out", out_p, "--mode", "point"]) == EXIT_OK
    assert read(out_r) != read(out_p)


def test_run_missing_file_is_io_error(tmp_path):
    code = main(
        ["run", "--scenario", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o.csv")]
    )
    assert code == EXIT_IO


def test_run_malformed_json_is_parse_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    code = main(["run", "--scenario", str(bad), "--out", str(tmp_path / "o.csv")])
    assert code == EXIT_PARSE


def test_run_unknown_field_is_parse_error(tmp_path, capsys):
    doc = tiny_doc()
    doc["sensors"][0]["weird"] = 1
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    code = main(["run", "--scenario", str(path), "--out", str(tmp_path / "o.csv")])
    assert code == EXIT_PARSE
    assert "sensors[0].weird" in capsys.readouterr().err


def test_run_validation_error_exit_code(tmp_path):
    doc = tiny_doc()
    doc["sensors"][0]["state"] = [-50.0, 430.0, 0.0, 0.0]  # outside the box
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    code = main(["run", "--scenario", str(path), "--out", str(tmp_path / "o.csv")])
    assert code == EXIT_VALIDATION


def test_run_unwritable_output_is_io_error(tiny_scenario_path, tmp_path):
    out = str(tmp_path / "missing_dir" / "o.csv")
    code = main(["run", "--scenario", tiny_scenario_path, "--seed", "1", "--out", out])
    assert code == EXIT_IO


# ---------------------------------------------------------------------------
# mc
# ---------------------------------------------------------------------------


def test_mc_single_run_matches_episode(tiny_scenario_path, tmp_path):
    run_out = str(tmp_path / "ep.csv")
    mc_out = str(tmp_path / "mc.csv")
    assert main(
        ["run", "--scenario", tiny_scenario_path, "--seed", "5", "--out", run_out, "--quiet"]
    ) == EXIT_OK
    assert main(
        [
            "mc",
            "--scenario",
            tiny_scenario_path,
            "--runs",
            "1",
            "--seed",
            "5",
            "--out",
            mc_out,
            "--quiet",
        ]
    ) == EXIT_OK
    ep = np.genfromtxt(run_out, delimiter=",", names=True)
    mc = np.genfromtxt(mc_out, delimiter=",", names=True)
    np.testing.assert_allclose(mc["p10"], ep["pos_err_m"])
    np.testing.assert_allclose(mc["p50"], ep["pos_err_m"])
    np.testing.assert_allclose(mc["p90"], ep["pos_err_m"])
    np.testing.assert_allclose(mc["mean_crb"], ep["crb_ref"])


def test_mc_deterministic_and_parallel_invariant(tiny_scenario_path, tmp_path, monkeypatch):
    out1 = str(tmp_path / "a.csv")
    out2 = str(tmp_path / "b.csv")
    out3 = str(tmp_path / "c.csv")
    base = ["mc", "--scenario", tiny_scenario_path, "--runs", "3", "--seed", "11", "--quiet"]
    monkeypatch.setenv("TRACK_THREADS", "1")
    assert main(base + ["--out", out1]) == EXIT_OK
    assert main(base + ["--out", out2]) == EXIT_OK
    monkeypatch.setenv("TRACK_THREADS", "2")
    assert main(base + ["--out", out3]) == EXIT_OK
    assert read(out1) == read(out2) == read(out3)


def test_mc_summary_schema(tiny_scenario_path, tmp_path):
    out = str(tmp_path / "mc.csv")
    assert main(
        [
            "mc",
            "--scenario",
            tiny_scenario_path,
            "--runs",
            "2",
            "--seed",
            "0",
            "--out",
            out,
            "--quiet",
        ]
    ) == EXIT_OK
    lines = open(out).read().splitlines()
    assert lines[0] == "t,target_id,p10,p50,p90,mean_crb"
    assert len(lines) == 1 + 10


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def test_validate_prints_normalized_roundtrip(tiny_scenario_path, capsys):
    assert main(["validate", "--scenario", tiny_scenario_path]) == EXIT_OK
    printed = capsys.readouterr().out
    doc = json.loads(printed)
    sc = scenario_from_dict(doc)
    assert scenario_to_dict(sc) == doc


def test_validate_accel_violation_names_target(tmp_path, capsys):
    doc = tiny_doc()
    doc["targets"][0]["accel"] = {"kind": "constant", "a": [4.0, 4.0]}
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    assert main(["validate", "--scenario", str(path)]) == EXIT_VALIDATION
    err = capsys.readouterr().err
    assert "target 0" in err and "step" in err


def test_validate_unknown_preset_is_io_error():
    assert main(["validate", "--scenario", "no_such_preset"]) == EXIT_IO


def test_all_presets_parse_and_validate(capsys):
    for preset in PRESETS:
        assert main(["validate", "--scenario", preset]) == EXIT_OK, preset
        capsys.readouterr()


def test_load_scenario_applies_mode_override(tiny_scenario_path):
    sc = load_scenario(tiny_scenario_path, mode_override="point")
    assert sc.mode == "point"
