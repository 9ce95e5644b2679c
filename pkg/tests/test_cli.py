import json
import subprocess
import sys

import pytest

from cdnslice.cli import main
from cdnslice.config import preset_path


def test_run_writes_outputs(tmp_path, capsys):
    assert main(["run", "empty_workload", "--out", str(tmp_path)]) == 0
    printed = capsys.readouterr().out.split()
    assert [p.rsplit("/", 1)[1] for p in printed] == ["timeseries.csv", "decisions.log", "summary.csv"]


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("CDNSLICE_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["run", "empty_workload"]) == 0
    assert (tmp_path / "env" / "timeseries.csv").exists()


def test_gen_catalog_stdout(capsys):
    assert main(["gen-catalog", "--seed", "3", "--clouds", "2", "--flavors", "9"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["clouds"]) == 2
    assert sum(len(c["flavors"]) for c in doc["clouds"]) == 9


def test_sweep_command(tmp_path):
    cfg = json.loads(preset_path("sweep").read_text())
    cfg["sweep"]["sizes"] = [10, 20]
    cfg["sweep"]["q_min_values"] = [3.5, 4.5]
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps(cfg))
    assert main(["sweep", str(path), "--axis", "q_min", "--reps", "1", "--out", str(tmp_path), "--timing"]) == 0
    assert (tmp_path / "sweep_q_min.csv").exists() and (tmp_path / "solver_timing.csv").exists()


def test_domain_errors_exit_2(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    assert "error:" in capsys.readouterr().err


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "cdnslice.cli", "run", "empty_workload", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
