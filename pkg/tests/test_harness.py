import json
import math
import subprocess
import sys

import numpy as np
import pytest

from monohop import dynamics as dyn
from monohop.cli import main as cli_main
from monohop.dynamics import compute_H, upright_state
from monohop.harness import (SCHEMA_VERSION, ScenarioConfig, ScenarioError,
                             apply_impulse, read_telemetry, run_scenario,
                             summarize_from_file, write_telemetry)


def test_scenario_config_validation():
    with pytest.raises(ScenarioError):
        ScenarioConfig(scenario="wall_jump")
    cfg = ScenarioConfig(scenario="lean_jump", overrides={"lean_deg": "x"})
    with pytest.raises(ScenarioError):
        cfg.load()
    cfg = ScenarioConfig(scenario="lean_jump", overrides={"no_such": 1.0})
    with pytest.raises(ScenarioError):
        cfg.load()


def test_apply_impulse_examples(p):
    s = upright_state(p)
    H = compute_H(s, p)
    s2 = apply_impulse(s, (0.013, 0.0, 0.0), p)
    assert s2.w_b[0] == pytest.approx(0.013 / H[0, 0], rel=1e-9)
    s3 = apply_impulse(s, (0.0, 0.0, 0.0), p)
    assert s3.w_b == s.w_b and s3.v == s.v
    s4 = apply_impulse(s, (-0.013, 0.0, 0.0), p)
    assert s4.w_b[0] == pytest.approx(-s2.w_b[0])


def test_telemetry_roundtrip(tmp_path, p, values):
    from monohop.executive import MissionScript, run_mission
    script = MissionScript.parse("balance duration=0.1")
    log = run_mission(script, upright_state(p, q_x=0.01), p, values,
                      timeout=1.0)
    path = tmp_path / "t.csv"
    write_telemetry(path, log)
    head = open(path).readline()
    assert SCHEMA_VERSION in head
    data = read_telemetry(path)
    assert len(data["t"]) == len(log.records)
    assert data["mode"][0] == "balancing"
    assert data["tilt_x"][0] == pytest.approx(log.records[0].tilt[0], rel=1e-6)


def test_read_rejects_bad_schema(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("# other-schema v9\nt,mode\n")
    with pytest.raises(ScenarioError, match="schema"):
        read_telemetry(f)
    f2 = tmp_path / "empty.csv"
    f2.write_text("# %s\nt,mode\n" % SCHEMA_VERSION)
    with pytest.raises(ScenarioError, match="no records"):
        read_telemetry(f2)


def test_lean_jump_scenario_and_file_summary(tmp_path):
    out = tmp_path / "lj.csv"
    cfg = ScenarioConfig(scenario="lean_jump", out_path=str(out))
    summary = run_scenario(cfg)
    assert summary["apex_height_m"] == pytest.approx(0.59, rel=0.10)
    assert summary["range_m"] == pytest.approx(0.82, rel=0.15)
    # metrics recomputed from the file match the printed summary
    again = summarize_from_file("lean_jump", str(out))
    assert again["apex_height_m"] == pytest.approx(summary["apex_height_m"],
                                                   abs=1e-9)
    assert again["range_m"] == pytest.approx(summary["range_m"], abs=1e-9)


def test_figure8_curvature_and_closure(tmp_path):
    out = tmp_path / "f8.csv"
    cfg = ScenarioConfig(scenario="figure8", out_path=str(out))
    summary = run_scenario(cfg)
    assert summary["curvature_signs"] in ([1, -1], [-1, 1])
    assert summary["closure_error_m"] < 0.25
    again = summarize_from_file("figure8", str(out))
    assert again["curvature_signs"] == summary["curvature_signs"]


def test_deterministic_telemetry_bytes(tmp_path):
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    run_scenario(ScenarioConfig(scenario="self_right", seed=3,
                                out_path=str(out1)))
    run_scenario(ScenarioConfig(scenario="self_right", seed=3,
                                out_path=str(out2)))
    assert open(out1, "rb").read() == open(out2, "rb").read()


def test_gravity_override(tmp_path):
    cfg = ScenarioConfig(scenario="lean_jump", overrides={"g": 4.9},
                         out_path=str(tmp_path / "half_g.csv"))
    summary = run_scenario(cfg)
    # halving gravity roughly doubles the apex
    assert summary["apex_height_m"] > 0.9


def test_cli_list_and_run(tmp_path, capsys):
    assert cli_main(["list"]) == 0
    out = capsys.readouterr().out
    assert "lean_jump" in out and "combined" in out
    rc = cli_main(["run", "lean_jump", "--out", str(tmp_path / "x.csv"),
                   "--override", "lean_deg=18"])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert "apex_height_m" in summary
    assert (tmp_path / "x.csv").exists()


def test_cli_error_paths(tmp_path, capsys):
    rc = cli_main(["run", "lean_jump", "--params", "/no/such/file.cfg"])
    assert rc == 1
    rc = cli_main(["run", "lean_jump", "--override", "nonsense"])
    assert rc == 2
