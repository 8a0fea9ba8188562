"""Machine-readable reports: JSON-lines records with a summary footer, or CSV plus a summary file."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .verifier import VerificationRecord, summarize

ESTIMATE_SCHEMA = {
    "type": "object",
    "required": ["value", "method", "err", "count"],
    "properties": {
        "value": {"type": "number"},
        "method": {"enum": ["closed-form", "quadrature", "nested-quadrature", "mc"]},
        "err": {"type": "number", "minimum": 0},
        "count": {"type": "integer", "minimum": 0},
    },
}

RECORD_SCHEMA = {
    "type": "object",
    "required": ["type", "inequality_id", "params", "lhs", "rhs", "margin", "sigma_margin", "verdict", "extras"],
    "properties": {
        "type": {"const": "record"},
        "inequality_id": {"type": "string"},
        "params": {"type": "object"},
        "lhs": ESTIMATE_SCHEMA,
        "rhs": ESTIMATE_SCHEMA,
        "margin": {"type": "number"},
        "sigma_margin": {"type": ["number", "null"]},
        "verdict": {"enum": ["pass", "fail", "inconclusive"]},
        "extras": {"type": "object"},
    },
}

SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["type", "tool_version", "config", "summary", "created"],
    "properties": {
        "type": {"const": "summary"},
        "tool_version": {"type": "string"},
        "config": {"type": "object"},
        "created": {"type": "string"},
        "summary": {
            "type": "object",
            "required": ["total", "pass", "fail", "inconclusive", "by_id"],
        },
    },
}

CSV_FIELDS = ("inequality_id", "verdict", "margin", "sigma_margin",
              "lhs_value", "lhs_method", "lhs_err", "lhs_count",
              "rhs_value", "rhs_method", "rhs_err", "rhs_count", "params", "extras")


def dumps(obj) -> str:
    """Compact, key-sorted JSON; floats use the shortest repr that round-trips exactly."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass(frozen=True)
class ReportDocument:
    records: tuple
    config: dict
    summary: dict
    tool_version: str = __version__
    created: str = ""

    @classmethod
    def build(cls, records: Sequence[VerificationRecord], config: dict, created: str | None = None):
        if created is None:
            created = datetime.now(timezone.utc).isoformat(timespec="seconds")
        return cls(tuple(records), dict(config), summarize(records), __version__, created)

    def footer(self) -> dict:
        return {"type": "summary", "tool_version": self.tool_version, "config": self.config,
                "summary": self.summary, "created": self.created}

    def record_lines(self) -> list[str]:
        return [dumps({"type": "record", **r.to_dict()}) for r in self.records]

    def to_jsonl(self) -> str:
        return "\n".join(self.record_lines() + [dumps(self.footer())]) + "\n"

    @property
    def exit_status(self) -> int:
        if self.summary["fail"]:
            return 1
        if self.summary["inconclusive"]:
            return 3
        return 0


def _csv_row(r: VerificationRecord) -> dict:
    d = r.to_dict()
    row = {"inequality_id": d["inequality_id"], "verdict": d["verdict"], "margin": repr(d["margin"]),
           "sigma_margin": "" if d["sigma_margin"] is None else repr(d["sigma_margin"]),
           "params": dumps(d["params"]), "extras": dumps(d["extras"])}
    for side in ("lhs", "rhs"):
        e = d[side]
        row[f"{side}_value"] = repr(e["value"])
        row[f"{side}_method"] = e["method"]
        row[f"{side}_err"] = repr(e["err"])
        row[f"{side}_count"] = str(e["count"])
    return row


def summary_path(path: Path) -> Path:
    return path.with_name(path.name + ".summary.json")


def write_report(doc: ReportDocument, path: str | Path, fmt: str = "json") -> None:
    """Write with a single writer; OSError propagates to the caller."""
    path = Path(path)
    if fmt == "json":
        path.write_text(doc.to_jsonl())
    elif fmt == "csv":
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
            w.writeheader()
            for r in doc.records:
                w.writerow(_csv_row(r))
        summary_path(path).write_text(dumps(doc.footer()) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def _record_from_csv(row: dict) -> VerificationRecord:
    est = lambda side: {"value": float(row[f"{side}_value"]), "method": row[f"{side}_method"],
                        "err": float(row[f"{side}_err"]), "count": int(row[f"{side}_count"])}
    return VerificationRecord.from_dict({
        "inequality_id": row["inequality_id"], "params": json.loads(row["params"]),
        "lhs": est("lhs"), "rhs": est("rhs"), "margin": float(row["margin"]),
        "sigma_margin": None if row["sigma_margin"] == "" else float(row["sigma_margin"]),
        "verdict": row["verdict"], "extras": json.loads(row["extras"]),
    })


def read_report(path: str | Path, fmt: str = "json") -> ReportDocument:
    path = Path(path)
    if fmt == "json":
        lines = [json.loads(x) for x in path.read_text().splitlines() if x.strip()]
        footer = lines[-1]
        records = [VerificationRecord.from_dict(x) for x in lines[:-1]]
    elif fmt == "csv":
        with path.open(newline="") as fh:
            records = [_record_from_csv(row) for row in csv.DictReader(fh)]
        footer = json.loads(summary_path(path).read_text())
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return ReportDocument(tuple(records), footer["config"], footer["summary"], footer["tool_version"],
                          footer["created"])


def iter_report_objects(path: str | Path) -> Iterable[dict]:
    for line in Path(path).read_text().splitlines():
        if line.strip():
            yield json.loads(line)
