import json
import subprocess
import sys

import pytest

from twoscale.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = {"H_M": 0.25, "H_m": 0.12, "T_end": 0.4, "dt": 0.1, "H_cell": 0.05}
    (d / "cfg.json").write_text(json.dumps(cfg))
    rc = main(["precompute", "--config", str(d / "cfg.json"), "--out", str(d / "tab"),
               "--h-min", "-0.1", "--h-max", "0.1", "--N", "4"])
    assert rc == 0
    return d


def test_precompute_outputs(workdir):
    assert (workdir / "tab" / "table.json").exists()
    lines = (workdir / "tab" / "table.csv").read_text().splitlines()
    assert lines[0] == "h,K11,K12,K22" and len(lines) == 6


def test_simulate(workdir):
    out = workdir / "sim"
    rc = main(["simulate", "--config", str(workdir / "cfg.json"), "--table", str(workdir / "tab" / "table.json"),
               "--out", str(out)])
    assert rc == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["completed"] and summary["steps"] == 4
    assert (out / "history.csv").read_text().startswith("t,theta_min")
    assert (out / "history.svg").exists() and (out / "trajectory.npz").exists()


def test_simulate_height_failure_exit_3(workdir, tmp_path):
    cfg = json.loads((workdir / "cfg.json").read_text())
    cfg.update(v_speed=5.0, source={"kind": "constant", "value": 10.0})
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    rc = main(["simulate", "--config", str(tmp_path / "c.json"), "--table", str(workdir / "tab" / "table.json"),
               "--out", str(tmp_path / "o")])
    assert rc == 3
    diag = json.loads((tmp_path / "o" / "diagnostic.json").read_text())
    assert diag["error"] == "height_out_of_range" and diag["details"]["node"] is not None


def test_config_errors_exit_2(tmp_path, capsys):
    (tmp_path / "bad.json").write_text(json.dumps({"dt": -0.1}))
    assert main(["simulate", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path)]) == 2
    assert "dt" in capsys.readouterr().err
    (tmp_path / "broken.json").write_text("{")
    assert main(["simulate", "--config", str(tmp_path / "broken.json"), "--out", str(tmp_path)]) == 2
    assert main(["cell-curve", "--workers", "0", "--out", str(tmp_path)]) == 2


def test_table_mismatch_exit_2(workdir, tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"r": 0.3, "H_m": 0.12}))
    rc = main(["simulate", "--config", str(tmp_path / "c.json"), "--table", str(workdir / "tab" / "table.json"),
               "--out", str(tmp_path)])
    assert rc == 2


def test_study_dt(workdir):
    spec = workdir / "spec.json"
    spec.write_text(json.dumps({"ladder": [0.4, 0.2], "reference": 0.1}))
    out = workdir / "study"
    rc = main(["study", "dt", "--config", str(workdir / "cfg.json"), "--table", str(workdir / "tab" / "table.json"),
               "--spec", str(spec), "--out", str(out), "--workers", "2"])
    assert rc == 0
    assert (out / "study_dt.csv").read_text().startswith("level,errTheta,errVartheta,errH")
    assert (out / "study_dt.svg").exists()


def test_study_bad_spec_exit_2(workdir, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"ladder": [0.1, 0.2], "reference": 0.4}))
    assert main(["study", "dt", "--spec", str(spec), "--out", str(tmp_path)]) == 2
    spec.write_text(json.dumps({"levels": [1]}))
    assert main(["study", "dt", "--spec", str(spec), "--out", str(tmp_path)]) == 2


def test_cell_curve(workdir):
    out = workdir / "curve"
    rc = main(["cell-curve", "--samples", "3", "--H-cell", "0.05", "--check-monotone", "--out", str(out)])
    assert rc == 0
    lines = (out / "cell_curve.csv").read_text().splitlines()
    assert lines[0] == "h,K11,K12,K22" and len(lines) == 4


def test_cell_curve_unmeshable_exit_3(tmp_path):
    rc = main(["cell-curve", "--samples", "2", "--h-min", "0.0", "--h-max", "0.2499", "--H-cell", "0.05",
               "--out", str(tmp_path)])
    assert rc == 3
    assert (tmp_path / "diagnostic.json").exists()


def test_interp_boundary(workdir):
    out = workdir / "ib"
    rc = main(["interp-boundary", "--config", str(workdir / "cfg.json"), "--table",
               str(workdir / "tab" / "table.json"), "--h-max-ladder", "0.05", "0.1", "--dh-ladder", "2", "4",
               "--out", str(out)])
    assert rc == 0
    assert (out / "interp_boundary.csv").exists() and (out / "interp_boundary.svg").exists()


def test_console_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "twoscale.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("precompute", "simulate", "study", "cell-curve", "interp-boundary"):
        assert cmd in res.stdout
