"""Per-class metadata ingestion and validation.

A MetadataTable is the canonical form every downstream stage consumes:
records sorted ascending by class id, one fixed column-name sequence,
missing values stored as None and never fabricated. Tables are immutable
after construction and safe to share.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .errors import DataError
from .hashing import sha256_hex

MISSING = None  # explicit missing marker; rendered as "" during captioning


@dataclass(frozen=True)
class ClassRecord:
    """One class's metadata row: (column name, value) pairs in table order.

    A value of None means the field is missing in the source data.
    table_digest binds the record to the table it came from.
    """

    class_id: int
    columns: tuple[tuple[str, Optional[str]], ...]
    table_digest: str = ""

    def value(self, column: str) -> Optional[str]:
        for name, val in self.columns:
            if name == column:
                return val
        raise DataError(f"unknown column {column!r} for class {self.class_id}")


@dataclass(frozen=True)
class MetadataTable:
    records: tuple[ClassRecord, ...]
    column_names: tuple[str, ...]
    source_digest: str

    def __post_init__(self):
        if not self.records:
            raise DataError("metadata table has no records")
        if not self.column_names:
            raise DataError("metadata table has no columns")

    @property
    def num_classes(self) -> int:
        return len(self.records)

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(r.class_id for r in self.records)


@dataclass(frozen=True)
class Finding:
    """One validation observation. Findings are data, not failures."""

    kind: str  # missing_value | constant_column
    message: str
    class_id: Optional[int] = None
    column: Optional[str] = None


def _clean(value: Optional[str]) -> Optional[str]:
    if value is None:
        return MISSING
    value = value.strip()
    return value if value else MISSING


def build_table(
    rows: Sequence[tuple[int, Sequence[Optional[str]]]],
    column_names: Sequence[str],
    source_digest: str,
) -> MetadataTable:
    """Assemble a canonical table from (class_id, values) rows.

    Rows are sorted ascending by class_id; duplicate ids are an error.
    """
    column_names = tuple(column_names)
    seen: set[int] = set()
    cleaned = []
    for class_id, values in rows:
        if class_id < 0:
            raise DataError(f"negative class_id {class_id}")
        if class_id in seen:
            raise DataError(f"duplicate class_id {class_id}")
        seen.add(class_id)
        if len(values) != len(column_names):
            raise DataError(
                f"ragged row for class_id {class_id}: "
                f"{len(values)} values for {len(column_names)} columns"
            )
        cleaned.append((class_id, tuple(_clean(v) for v in values)))
    cleaned.sort(key=lambda row: row[0])
    records = tuple(
        ClassRecord(
            class_id=cid,
            columns=tuple(zip(column_names, values)),
            table_digest=source_digest,
        )
        for cid, values in cleaned
    )
    return MetadataTable(records=records, column_names=column_names, source_digest=source_digest)


def load_metadata(path: str | Path, format: str = "csv") -> MetadataTable:
    """Load a per-class metadata file in CSV or JSON form.

    CSV: header row required, RFC-4180, mandatory `class_id` column.
    JSON: top-level array of objects with integer `class_id`.
    Input must be valid UTF-8; the source digest is over the raw bytes.
    """
    raw = Path(path).read_bytes()
    if not raw.strip():
        raise DataError(f"empty metadata file: {path}")
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"metadata file is not valid UTF-8: {path}: {exc}") from exc
    digest = sha256_hex(raw)
    if format == "csv":
        return _parse_csv(text, digest)
    if format == "json":
        return _parse_json(text, digest)
    raise DataError(f"unknown metadata format {format!r} (expected csv or json)")


def _parse_csv(text: str, digest: str) -> MetadataTable:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("metadata CSV has no header row") from None
    header = [h.strip() for h in header]
    if "class_id" not in header:
        raise DataError("metadata CSV is missing the class_id column")
    id_index = header.index("class_id")
    column_names = [h for i, h in enumerate(header) if i != id_index]
    if not column_names:
        raise DataError("metadata CSV has no metadata columns besides class_id")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"ragged CSV row at line {lineno}: {len(row)} fields, expected {len(header)}")
        try:
            class_id = int(row[id_index].strip())
        except ValueError as exc:
            raise DataError(f"non-integer class_id at line {lineno}: {row[id_index]!r}") from exc
        values = [v for i, v in enumerate(row) if i != id_index]
        rows.append((class_id, values))
    if not rows:
        raise DataError("metadata CSV has a header but no data rows")
    return build_table(rows, column_names, digest)


def _parse_json(text: str, digest: str) -> MetadataTable:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed metadata JSON: {exc}") from exc
    if not isinstance(doc, list) or not doc:
        raise DataError("metadata JSON must be a non-empty array of objects")
    column_names: Optional[list[str]] = None
    rows = []
    for i, obj in enumerate(doc):
        if not isinstance(obj, dict) or "class_id" not in obj:
            raise DataError(f"metadata JSON record {i} is not an object with class_id")
        class_id = obj["class_id"]
        if not isinstance(class_id, int) or isinstance(class_id, bool):
            raise DataError(f"metadata JSON record {i} has non-integer class_id {class_id!r}")
        names = [k for k in obj if k != "class_id"]
        if column_names is None:
            column_names = names
            if not column_names:
                raise DataError("metadata JSON records carry no columns besides class_id")
        elif names != column_names:
            raise DataError(f"metadata JSON record {i} columns {names} differ from {column_names}")
        values = []
        for name in column_names:
            val = obj[name]
            if val is not None and not isinstance(val, str):
                raise DataError(f"metadata JSON record {i} column {name!r} is not a string")
            values.append(val)
        rows.append((class_id, values))
    return build_table(rows, column_names, digest)


def validate_table(table: MetadataTable) -> list[Finding]:
    """Report missing values and columns constant across all classes."""
    findings: list[Finding] = []
    for record in table.records:
        for name, value in record.columns:
            if value is MISSING:
                findings.append(
                    Finding(
                        kind="missing_value",
                        message=f"class {record.class_id} is missing column {name!r}",
                        class_id=record.class_id,
                        column=name,
                    )
                )
    for column in table.column_names:
        distinct = {record.value(column) for record in table.records}
        if len(distinct) == 1 and len(table.records) > 1:
            findings.append(
                Finding(
                    kind="constant_column",
                    message=f"column {column!r} has the same value for every class",
                    column=column,
                )
            )
    return findings


def column_values(table: MetadataTable, column: str) -> list[str]:
    """Values of one column in canonical class-id order; missing renders as ""."""
    if column not in table.column_names:
        raise DataError(f"unknown column {column!r}; table has {list(table.column_names)}")
    return [record.value(column) or "" for record in table.records]


def to_csv(table: MetadataTable) -> str:
    """Canonical CSV serialization; reloading it reproduces the table."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["class_id", *table.column_names])
    for record in table.records:
        writer.writerow([record.class_id, *(value or "" for _, value in record.columns)])
    return buf.getvalue()


def save_csv(table: MetadataTable, path: str | Path) -> None:
    Path(path).write_bytes(to_csv(table).encode("utf-8"))
