"""CSV and JSON writers for benchmark reports.

Output is a pure function of the report: no timestamps, fixed column order
and fixed number formatting, so reruns with the same seed are byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict
from pathlib import Path

from msdetect.calibrate import BenchReport, BenchRow

CSV_COLUMNS = (
    "rule", "params", "b", "n_streams", "mu", "nu", "membership", "n_affected",
    "mean", "se", "trials", "censored", "seed", "convention", "arl_hat", "arl_se",
)


def _fmt(x, digits: int = 6) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isinf(x):
            return "inf"
        return f"{x:.{digits}g}"
    return str(x)


def format_se(se: float) -> str:
    """Standard error to two significant digits."""
    return f"{se:.2g}"


def row_values(row: BenchRow) -> list[str]:
    return [
        row.rule,
        json.dumps(row.params, sort_keys=True, separators=(",", ":")),
        _fmt(row.b),
        str(row.n_streams),
        _fmt(row.mu),
        _fmt(row.nu),
        row.membership,
        _fmt(row.n_affected),
        _fmt(row.mean, 5),
        format_se(row.se),
        str(row.trials),
        str(row.censored),
        str(row.seed),
        row.convention,
        _fmt(row.arl_hat, 6),
        "" if row.arl_se is None else format_se(row.arl_se),
    ]


def write_csv(report: BenchReport, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in report.rows:
            w.writerow(row_values(row))
    return path


def _clean(obj):
    # JSON has no inf/nan
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def report_dict(report: BenchReport) -> dict:
    return _clean({
        "gamma": report.gamma,
        "seed": report.seed,
        "columns": list(CSV_COLUMNS),
        "rows": [asdict(r) for r in report.rows],
        "calibrations": report.calibrations,
    })


def write_json(report: BenchReport, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report_dict(report), indent=2, sort_keys=False) + "\n")
    return path


def pivot_key(row: BenchRow) -> str:
    """Column key of a row in the pivot: ``#N`` normally, ``mu`` when staggered."""
    if row.convention == "staggered_expected_stop":
        return f"mu={row.mu:g}"
    if row.n_affected is not None:
        return str(row.n_affected)
    return row.membership


def pivot(report: BenchReport) -> tuple[list[str], list[str], dict]:
    """Rules x scenario-columns table of mean delays, in first-seen order."""
    rules: list[str] = []
    cols: list[str] = []
    cells: dict = {}
    for row in report.rows:
        key = pivot_key(row)
        if row.rule not in rules:
            rules.append(row.rule)
        if key not in cols:
            cols.append(key)
        cells[row.rule, key] = row
    return rules, cols, cells


def write_pivot_csv(report: BenchReport, path) -> Path:
    """Mean delays laid out as a rules x scenarios table, plus a max-s.e. row."""
    path = Path(path)
    rules, cols, cells = pivot(report)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rule", *cols])
        for r in rules:
            w.writerow([r, *(f"{cells[r, c].mean:.1f}" if (r, c) in cells else "" for c in cols)])
        se_row = []
        for c in cols:
            ses = [cells[r, c].se for r in rules if (r, c) in cells]
            se_row.append(format_se(max(ses)) if ses else "")
        w.writerow(["s.e.", *se_row])
    return path


def format_pivot(report: BenchReport) -> str:
    rules, cols, cells = pivot(report)
    width = max([len(r) for r in rules] + [4])
    lines = [" " * width + "".join(f"{c:>9}" for c in cols)]
    for r in rules:
        vals = "".join(f"{cells[r, c].mean:9.1f}" if (r, c) in cells else " " * 9 for c in cols)
        lines.append(f"{r:<{width}}{vals}")
    return "\n".join(lines)
