"""
Report service.
Writes records.csv (or records.json) and summary.json for a study.
"""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Iterable, List, Sequence

from pydantic import BaseModel

from app.models.schemas import StudySummary

logger = logging.getLogger(__name__)


def format_cell(value: Any) -> str:
    """Render one CSV cell; floats use 15 significant digits and flags join with ';'."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".15g")
    if isinstance(value, (list, tuple)):
        return ";".join(str(item) for item in value)
    if value is None:
        return ""
    return str(value)


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, complex):
        return [_json_safe(value.real), _json_safe(value.imag)]
    if isinstance(value, dict):
        return {key: _json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(item) for item in value]
    return value


class ReportService:
    """Service for writing study outputs."""

    def __init__(self, out_dir: str):
        """
        Initialize report service.

        Args:
            out_dir: Output directory, created if missing
        """
        self.out_dir = Path(out_dir)

    def row_values(self, row: BaseModel, columns: Sequence[str]) -> List[str]:
        """Cells of one row in the fixed column order."""
        data = row.model_dump()
        if "epsilons" in data and "eps1" in columns:
            data["eps1"], data["eps2"] = data["epsilons"]
        return [format_cell(data.get(column)) for column in columns]

    def write_records_csv(self, rows: Iterable[BaseModel], columns: Sequence[str]) -> Path:
        """Write rows as records.csv with a header line."""
        path = self._target("records.csv")
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow(self.row_values(row, columns))
        logger.info(f"Wrote {path}")
        return path

    def write_records_json(self, rows: Iterable[BaseModel]) -> Path:
        """Write rows as a JSON list with every model field."""
        path = self._target("records.json")
        payload = [_json_safe(row.model_dump()) for row in rows]
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info(f"Wrote {path}")
        return path

    def write_records(self, rows: Sequence[BaseModel], columns: Sequence[str], fmt: str = "csv") -> Path:
        if fmt == "json":
            return self.write_records_json(rows)
        return self.write_records_csv(rows, columns)

    def write_summary(self, summary: StudySummary) -> Path:
        """Write summary.json (non-finite numbers become null)."""
        path = self._target("summary.json")
        payload = _json_safe(summary.model_dump(by_alias=True))
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info(f"Wrote {path}")
        return path

    def _target(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name
