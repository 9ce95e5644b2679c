"""CSV and log emission for run reports."""

from __future__ import annotations

import csv
from pathlib import Path

from .engine import TIMESERIES_COLUMNS, RunReport


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def emit_outputs(report: RunReport, directory: str | Path) -> list[Path]:
    """Write timeseries.csv, decisions.log and summary.csv; returns the paths.

    Floats are printed with fixed precision so a given seed always produces
    the same bytes.  Monthly costs use 730 hours per month.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    ts, log, summary = out / "timeseries.csv", out / "decisions.log", out / "summary.csv"
    _write_csv(ts, TIMESERIES_COLUMNS, report.timeseries)
    log.write_text("".join(line + "\n" for line in report.log_lines))
    columns = list(report.summary[0]) if report.summary else ["region"]
    _write_csv(summary, columns, report.summary)
    return [ts, log, summary]
