"""
Tests for study output files.
"""

import csv
import json

import pytest

from app.models.schemas import CheckResult, SepReport, StudyRecord, StudySummary
from app.services.report_service import ReportService, format_cell


class TestFormatCell:
    """Test cases for CSV cell formatting."""

    def test_values(self):
        """Test floats, booleans, lists and missing values."""
        assert format_cell(0.1) == "0.1"
        assert format_cell(1.0 / 3.0) == "0.333333333333333"
        assert format_cell(float("nan")) == "nan"
        assert format_cell(float("-inf")) == "-inf"
        assert format_cell(True) == "true"
        assert format_cell(["a", "b"]) == "a;b"
        assert format_cell([]) == ""
        assert format_cell(None) == ""
        assert format_cell(21) == "21"


class TestReportService:
    """Test cases for ReportService."""

    @pytest.fixture
    def report_service(self, tmp_path):
        """Create report service writing into a temporary directory."""
        return ReportService(str(tmp_path / "out"))

    @pytest.fixture
    def records(self):
        return [
            StudyRecord(h=0.125, N=21, gapUS_H=3e-3, flags=["exact_capture", "gap_order_violation"]),
            StudyRecord(h=1 / 12, N=55, gapUS_H=1e-3),
        ]

    def test_write_records_csv(self, report_service, records):
        """Test header order, one row per record and flag joining."""
        path = report_service.write_records(records, StudyRecord.CSV_COLUMNS, "csv")
        assert path.name == "records.csv"
        with path.open(encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
        assert tuple(rows[0]) == StudyRecord.CSV_COLUMNS
        assert len(rows) == 3
        first = dict(zip(rows[0], rows[1]))
        assert first["h"] == "0.125"
        assert first["N"] == "21"
        assert first["beta"] == "nan"
        assert first["flags"] == "exact_capture;gap_order_violation"
        assert dict(zip(rows[0], rows[2]))["flags"] == ""

    def test_write_records_json(self, report_service, records):
        """Test JSON records turn NaN into null."""
        path = report_service.write_records(records, StudyRecord.CSV_COLUMNS, "json")
        payload = json.loads(path.read_text(encoding="utf-8"))
        assert path.name == "records.json"
        assert payload[0]["N"] == 21
        assert payload[0]["beta"] is None
        assert payload[1]["gapUS_H"] == pytest.approx(1e-3)

    def test_sep_rows_split_epsilons(self, report_service):
        """Test the epsilon pair maps onto eps1 and eps2 columns."""
        report = SepReport(
            seed=3, sep_exact=2.0, bound_pseudo=1.0, contour_center=(0.0, 0.0),
            contour_radius=1.0, contour_nodes=32, epsilons=(1.0, 0.5),
        )
        cells = dict(zip(SepReport.CSV_COLUMNS, report_service.row_values(report, SepReport.CSV_COLUMNS)))
        assert cells["eps1"] == "1"
        assert cells["eps2"] == "0.5"
        assert cells["bound_numrange"] == ""

    def test_write_summary(self, report_service):
        """Test summary.json carries the schema key and nulls for NaN."""
        summary = StudySummary(
            kind="spectral",
            config={"seed": 1},
            defaults={"CONTOUR_NODES": 32},
            fitted_constants={"c0": float("nan")},
            checks=[CheckResult(name="rate_gapUS_H", passed=True, value=2.01)],
        )
        payload = json.loads(report_service.write_summary(summary).read_text(encoding="utf-8"))
        assert payload["schema"] == 1
        assert "schema_version" not in payload
        assert payload["fitted_constants"]["c0"] is None
        assert payload["checks"][0]["name"] == "rate_gapUS_H"
        assert payload["passed"] is True
