from __future__ import annotations
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

import pandas as pd

from .config import REPORT_SCHEMA_VERSION


def write_table(df: pd.DataFrame, path: str | Path, sheet_name: str = "report") -> Path:
    """Write a table; format is picked from the suffix (.csv, .xlsx, .parquet)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    suffix = path.suffix.lower()
    if suffix == ".xlsx":
        with pd.ExcelWriter(path, engine="xlsxwriter") as xw:
            df.to_excel(xw, index=False, sheet_name=sheet_name)
    elif suffix == ".parquet":
        df.to_parquet(path, index=False)
    else:
        df.to_csv(path, index=False)
    return path


def report_document(reports: Iterable, **extra) -> dict:
    """Schema-versioned envelope around BenchReport dicts."""
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "reports": [r.to_dict() if hasattr(r, "to_dict") else dict(r) for r in reports],
    }
    doc.update(extra)
    return doc


def write_report_json(reports: Iterable, path: str | Path, **extra) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report_document(reports, **extra), indent=2), encoding="utf-8")
    return path


def write_jsonl(records: Iterable[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    return path
