"""Audit report container and its on-disk forms (CSV directory or one JSON file)."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__

# keys that never influence numeric output
_UNHASHED = ("threads", "out", "config", "format")


@dataclass
class Table:
    columns: list[str]
    rows: list[Sequence[Any]]


@dataclass
class Section:
    meta: dict[str, Any] = field(default_factory=dict)
    tables: dict[str, Table] = field(default_factory=dict)

    def add(self, name: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
        self.tables[name] = Table(list(columns), [list(r) for r in rows])


@dataclass
class AuditReport:
    meta: dict[str, Any] = field(default_factory=dict)
    sections: dict[str, Section] = field(default_factory=dict)


def config_hash(config: dict[str, Any]) -> str:
    canon = {k: v for k, v in config.items() if k not in _UNHASHED}
    blob = json.dumps(canon, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def new_report(config: dict[str, Any]) -> AuditReport:
    return AuditReport(
        meta={
            "tool": "weightaudit",
            "version": __version__,
            "seed": config.get("seed"),
            "config": config,
            "config_hash": config_hash(config),
        }
    )


def _plain(v: Any) -> Any:
    """numpy scalars to the matching Python type, so reprs stay plain."""
    if isinstance(v, np.generic):
        return v.item()
    return v


def _cell(v: Any) -> Any:
    v = _plain(v)
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return v


def _json_value(v: Any) -> Any:
    v = _plain(v)
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, dict):
        return {k: _json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_value(x) for x in v]
    return v


def table_csv(table: Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_report(report: AuditReport, directory: str | Path, fmt: str = "csv") -> None:
    """Write into ``directory`` (which must already exist)."""
    directory = Path(directory)
    if fmt == "json":
        doc = {
            "meta": report.meta,
            "sections": {
                name: {
                    "meta": sec.meta,
                    "tables": {t: {"columns": tab.columns, "rows": tab.rows} for t, tab in sec.tables.items()},
                }
                for name, sec in report.sections.items()
            },
        }
        text = json.dumps(_json_value(doc), indent=2, default=str)
        (directory / "report.json").write_text(text + "\n")
        return
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    manifest: dict[str, Any] = {"meta": report.meta, "sections": {}}
    for name, sec in report.sections.items():
        entry: dict[str, Any] = {"meta": sec.meta, "tables": {}}
        for tname, tab in sec.tables.items():
            fname = f"{name}.{tname}.csv"
            (directory / fname).write_text(table_csv(tab))
            entry["tables"][tname] = {"file": fname, "columns": tab.columns, "rows": len(tab.rows)}
        manifest["sections"][name] = entry
    (directory / "manifest.json").write_text(json.dumps(_json_value(manifest), indent=2, default=str) + "\n")


def read_table(directory: str | Path, section: str, table: str) -> list[dict[str, str]]:
    with open(Path(directory) / f"{section}.{table}.csv", newline="") as fh:
        return list(csv.DictReader(fh))
