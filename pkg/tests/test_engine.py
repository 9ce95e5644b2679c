import json

import pytest

from cdnslice.config import PRESETS, config_from_dict, load_config, preset_path
from cdnslice.edm import DecisionKind
from cdnslice.engine import HOURS_PER_MONTH, TIMESERIES_COLUMNS, run_scenario
from cdnslice.errors import ConfigError
from cdnslice.report import emit_outputs

RUN_PRESETS = [p for p in PRESETS if p != "sweep"]


@pytest.fixture(scope="module")
def reports():
    return {name: run_scenario(load_config(name)) for name in RUN_PRESETS}


@pytest.mark.parametrize("name", RUN_PRESETS)
def test_presets_run_clean(reports, name):
    report = reports[name]
    assert report.ok, report.violations[:3]
    assert report.timeseries and report.summary


def test_empty_workload_is_flat(reports):
    r = reports["empty_workload"]
    assert not r.decisions and not r.jobs
    assert {row["instances"] for row in r.timeseries if row["region"] == "r1"} == {1}
    assert {row["instances"] for row in r.timeseries if row["region"] == "r2"} == {0}
    assert all(line.split()[3].startswith(("dimension", "active")) for line in r.log_lines)


def test_load_step_gives_one_changeover(reports):
    r = reports["elasticity_step"]
    changes = [d for _, _, d in r.decisions if d.kind is not DecisionKind.NO_ACTION]
    assert len(changes) == 1
    assert sum("released instance" in line for line in r.log_lines) == 1


def test_scale_out_line_carries_probe_trace(reports):
    lines = [line for line in reports["scale_out"].log_lines if " ScaleOut " in line]
    assert len(lines) == 1
    assert "probe-C3" in lines[0] and "scale-out add=" in lines[0]


def test_bandwidth_drop_runs_one_job(reports):
    r = reports["transcoding_drop"]
    assert len(r.jobs) == 1
    phases = [line.split("phase=")[1].split()[0] for line in r.log_lines if "job=job1" in line]
    assert phases == ["Booting", "Transcoding", "Mixing", "Done"]


def test_outputs(reports, tmp_path):
    r = reports["elasticity_step"]
    paths = emit_outputs(r, tmp_path)
    assert [p.name for p in paths] == ["timeseries.csv", "decisions.log", "summary.csv"]
    header = (tmp_path / "timeseries.csv").read_text().splitlines()[0]
    assert header == ",".join(TIMESERIES_COLUMNS)
    assert (tmp_path / "decisions.log").read_text().splitlines() == r.log_lines
    row = r.summary[0]
    assert row["monthly_cost_usd_730h"] == pytest.approx(row["mean_cost_usd_h"] * HOURS_PER_MONTH)


def test_series_cadence_is_monitoring_period(reports):
    times = sorted({row["t_s"] for row in reports["elasticity_step"].timeseries})
    assert all(b - a == 60 for a, b in zip(times, times[1:]))


def test_config_errors(tmp_path):
    doc = json.loads(preset_path("elasticity_step").read_text())
    del doc["seed"]
    with pytest.raises(ConfigError):
        config_from_dict(doc)
    doc = json.loads(preset_path("elasticity_step").read_text())
    doc["workload"] = {"nowhere": {"mode": "poisson", "steps": [[0, 1]]}}
    with pytest.raises(ConfigError):
        config_from_dict(doc)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_output_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv("CDNSLICE_OUTPUT_DIR", str(tmp_path / "o"))
    assert load_config("empty_workload").resolved_output_dir() == tmp_path / "o"
