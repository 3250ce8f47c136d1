"""
Result file writers.

Every CSV has a fixed header, LF line endings and numbers formatted to 12
significant digits; JSON files use sorted keys. Identical inputs therefore
give byte-identical files.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence

from mechanisms.schemas import AuditReport, RunSummary
from mechanisms.utils import format_number, round_floats
from .experiments import PROFILE_HEADER, SCHEDULE_HEADER, SWEEP_HEADER, RunResult
from .interim_engine import InterimCurve

logger = logging.getLogger(__name__)

CURVE_HEADER = ("agent", "cell", "lower_edge", "value", "source")


def _cell(value: Any) -> str:
    if value is None:
        return ""
    return format_number(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
            count += 1
    logger.debug(f"Wrote {count} rows to {path}")
    return path


def write_json(path: Path, payload: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n", encoding="utf-8") as f:
        json.dump(round_floats(payload), f, sort_keys=True, indent=2)
        f.write("\n")
    return path


def output_path(out_dir: Path, prefix: str, name: str) -> Path:
    return Path(out_dir) / f"{prefix}{name}"


def write_summary(out_dir: Path, prefix: str, summary: RunSummary) -> Path:
    return write_json(output_path(out_dir, prefix, "summary.json"), summary.model_dump())


def write_curves(out_dir: Path, prefix: str, curves: Sequence[InterimCurve]) -> Path:
    rows = [row for curve in curves for row in curve.to_rows()]
    return write_csv(output_path(out_dir, prefix, "curves.csv"), CURVE_HEADER, rows)


def write_run(out_dir: Path, prefix: str, result: RunResult) -> List[Path]:
    """schedule.csv, profiles.csv, summary.json and, for Bayesian reductions, curves.csv."""
    paths = [
        write_csv(output_path(out_dir, prefix, "schedule.csv"), SCHEDULE_HEADER, result.schedule_rows),
        write_csv(output_path(out_dir, prefix, "profiles.csv"), PROFILE_HEADER, result.profile_rows),
        write_summary(out_dir, prefix, result.summary),
    ]
    if result.experiment.curves:
        paths.append(write_curves(out_dir, prefix, result.experiment.curves))
    return paths


def write_audit(
    out_dir: Path,
    prefix: str,
    reports: Sequence[AuditReport],
    config_hash: Optional[str] = None,
    seed: Optional[int] = None,
) -> List[Path]:
    payload = {"reports": [r.model_dump() for r in reports], "config_hash": config_hash, "seed": seed}
    return [
        write_json(output_path(out_dir, prefix, "audit.json"), payload),
        write_csv(output_path(out_dir, prefix, "audit.csv"), AuditReport.CSV_HEADER, [r.csv_row() for r in reports]),
    ]


def write_lowerbound(out_dir: Path, prefix: str, report: AuditReport, parameters: dict) -> Path:
    payload = {"parameters": parameters, "report": report.model_dump()}
    return write_json(output_path(out_dir, prefix, "lowerbound.json"), payload)


def write_sweep(out_dir: Path, prefix: str, rows: Sequence[Sequence[Any]]) -> Path:
    return write_csv(output_path(out_dir, prefix, "sweep.csv"), SWEEP_HEADER, rows)
