import csv
import json
import subprocess
import sys

from cbf_taskstack.cli import main
from cbf_taskstack.sim import read_csv


def test_run_writes_trace_and_report(tmp_path, capsys):
    out = tmp_path / "trace.csv"
    code = main(["run", "minimal", "--out", str(out)])
    assert code == 0
    header, data = read_csv(out)
    assert header[0] == "t" and data.shape[0] == 1000
    report = (tmp_path / "report.txt").read_text()
    assert "min h_q" in report and "status: ok" in report


def test_run_records_overrides(tmp_path):
    out = tmp_path / "trace.csv"
    assert main(["run", "minimal", "--out", str(out), "--dt", "0.01", "--horizon", "0.5"]) == 0
    report = (tmp_path / "report.txt").read_text()
    assert "overrides: dt=0.01, horizon=0.5" in report
    assert "steps: 50" in report


def test_invalid_scenario_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"tasks": [{"label": "x", "map": "warp", "barrier": {"type": "setpoint"}}]}))
    assert main(["run", str(bad), "--out", str(tmp_path / "t.csv")]) == 1
    err = capsys.readouterr().err
    assert "robot" in err and "warp" in err
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert main(["validate", str(broken)]) == 1


def test_sweep_writes_one_row_per_combination(tmp_path):
    out = tmp_path / "sweep.csv"
    code = main(["sweep", "swap_7dof", "--dt", "0.002", "0.004", "--kappa", "2", "10", "--horizon", "0.5", "--out", str(out)])
    assert code == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 4
    assert {(float(r["dt"]), float(r["kappa"])) for r in rows} == {(0.002, 2.0), (0.002, 10.0), (0.004, 2.0), (0.004, 10.0)}
    assert all(r["status"] == "ok" for r in rows)
    assert "min_h_q" in rows[0] and "max_increment" in rows[0]


def test_validate_with_random_states(capsys):
    assert main(["validate", "protocol_7dof", "--random-states", "200", "--seed", "3"]) == 0
    assert "0 problems" in capsys.readouterr().out


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    for name in ("protocol_7dof.json", "swap_7dof.json", "minimal.json"):
        assert name in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "cbf_taskstack", "list-scenarios"], capture_output=True, text=True)
    assert proc.returncode == 0 and "minimal.json" in proc.stdout
