"""CSV and JSON serialization of replicate and summary tables.

Every CSV file starts with a ``#schema=<name>/<version>`` line followed by
the header.  Floats are written with ``repr`` (shortest round-trip form),
NaN as an empty field, booleans as ``true``/``false``.  Readers reject
unknown or missing columns.
"""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

from ..harness import (
    CROSS_COLUMNS,
    CROSS_SCHEMA,
    LONG_COLUMNS,
    LONG_SCHEMA,
    REPLICATE_COLUMNS,
    REPLICATE_SCHEMA,
    ReplicateTable,
    SummaryTable,
)

TEXT_COLUMNS = {"experiment", "scenario", "hypothesis", "model", "ci_kind"}
INT_COLUMNS = {"replicate", "n_replicates"}
BOOL_COLUMNS = {"converged", "favors_active"}
SUMMARY_SCHEMAS = {CROSS_SCHEMA: CROSS_COLUMNS, LONG_SCHEMA: LONG_COLUMNS}
ALL_SCHEMAS = {REPLICATE_SCHEMA: REPLICATE_COLUMNS, **SUMMARY_SCHEMAS}


class SchemaError(ValueError):
    """Input file does not match a known table schema."""


def format_value(col: str, v) -> str:
    if col in TEXT_COLUMNS:
        return str(v)
    if col in BOOL_COLUMNS:
        return "true" if v else "false"
    if col in INT_COLUMNS:
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def parse_value(col: str, s: str):
    if col in TEXT_COLUMNS:
        return s
    if col in BOOL_COLUMNS:
        if s not in ("true", "false"):
            raise SchemaError(f"column {col!r}: expected true/false, got {s!r}")
        return s == "true"
    if col in INT_COLUMNS:
        return int(s)
    return math.nan if s == "" else float(s)


def _write_csv(schema: str, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"#schema={schema}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([format_value(c, v) for c, v in zip(columns, row)])
    return buf.getvalue()


def replicates_to_csv(table: ReplicateTable) -> str:
    cols = [table[c] for c in REPLICATE_COLUMNS]
    return _write_csv(REPLICATE_SCHEMA, REPLICATE_COLUMNS, zip(*cols))


def summary_to_csv(summary: SummaryTable) -> str:
    return _write_csv(summary.schema, summary.columns, ([r[c] for c in summary.columns] for r in summary.rows))


def read_table_csv(text: str):
    """Parse any table written by this module: ``(schema, columns, rows)``."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#schema="):
        raise SchemaError("missing '#schema=' line")
    schema = lines[0][len("#schema="):].strip()
    if schema not in ALL_SCHEMAS:
        raise SchemaError(f"unknown schema {schema!r}")
    reader = csv.reader(lines[1:])
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("missing header row") from None
    expected = ALL_SCHEMAS[schema]
    unknown = [c for c in header if c not in expected]
    if unknown:
        raise SchemaError(f"unknown column(s) for {schema}: {', '.join(unknown)}")
    missing = [c for c in expected if c not in header]
    if missing:
        raise SchemaError(f"missing column(s) for {schema}: {', '.join(missing)}")
    rows = []
    for lineno, rec in enumerate(reader, start=3):
        if len(rec) != len(header):
            raise SchemaError(f"line {lineno}: expected {len(header)} fields, got {len(rec)}")
        try:
            rows.append({c: parse_value(c, s) for c, s in zip(header, rec)})
        except ValueError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
    return schema, tuple(expected), rows


def summary_from_csv(text: str) -> SummaryTable:
    schema, cols, rows = read_table_csv(text)
    if schema not in SUMMARY_SCHEMAS:
        raise SchemaError(f"expected a summary table, got {schema}")
    return SummaryTable(schema, cols, [{c: r[c] for c in cols} for r in rows])


def replicates_from_csv(text: str) -> ReplicateTable:
    schema, cols, rows = read_table_csv(text)
    if schema != REPLICATE_SCHEMA:
        raise SchemaError(f"expected a replicate table, got {schema}")
    out = {}
    for c in cols:
        vals = [r[c] for r in rows]
        if c in TEXT_COLUMNS:
            out[c] = np.array(vals, dtype=object)
        elif c in BOOL_COLUMNS:
            out[c] = np.array(vals, dtype=bool)
        elif c in INT_COLUMNS:
            out[c] = np.array(vals, dtype=int)
        else:
            out[c] = np.array(vals, dtype=float)
    return ReplicateTable(out)


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def summary_to_json(summary: SummaryTable, meta: dict | None = None) -> str:
    doc = {
        "schema": summary.schema,
        "columns": list(summary.columns),
        "rows": [{c: _json_value(r[c]) for c in summary.columns} for r in summary.rows],
    }
    if meta:
        doc["meta"] = meta
    return json.dumps(doc, indent=2) + "\n"


def summary_from_json(text: str) -> SummaryTable:
    doc = json.loads(text)
    schema = doc.get("schema")
    if schema not in SUMMARY_SCHEMAS:
        raise SchemaError(f"unknown summary schema {schema!r}")
    cols = SUMMARY_SCHEMAS[schema]
    rows = []
    for r in doc["rows"]:
        unknown = set(r) - set(cols)
        if unknown:
            raise SchemaError(f"unknown field(s): {', '.join(sorted(unknown))}")
        row = {}
        for c in cols:
            v = r[c]
            if c not in TEXT_COLUMNS and c not in INT_COLUMNS:
                v = math.nan if v is None else float(v)
            row[c] = v
        rows.append(row)
    return SummaryTable(schema, cols, rows)
