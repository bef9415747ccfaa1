"""In-memory columnar table with typed cells and CSV round-tripping.

Missing cells are ``None`` everywhere; on disk they are empty fields.
Numeric cells are written with the shortest representation that parses back
to the same float, so write -> load is stable for schema and cells.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import CsvFormatError, InputError


class ColumnKind(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"
    TEXT = "text"


@dataclass(frozen=True)
class ColumnSchema:
    """Name, kind, and declared sensitivity label of one column."""

    name: str
    kind: ColumnKind
    sensitivity: str = ""


@dataclass
class Column:
    schema: ColumnSchema
    cells: list

    @property
    def name(self) -> str:
        return self.schema.name


@dataclass
class Table:
    columns: list[Column] = field(default_factory=list)

    def __post_init__(self):
        lengths = {len(c.cells) for c in self.columns}
        if len(lengths) > 1:
            raise InputError(f"columns have unequal lengths: {sorted(lengths)}")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise InputError("duplicate column names")

    @property
    def row_count(self) -> int:
        return len(self.columns[0].cells) if self.columns else 0

    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise InputError(f"no such column: {name!r}")

    def has_column(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    def copy(self) -> "Table":
        return Table([Column(c.schema, list(c.cells)) for c in self.columns])

    def digest(self) -> str:
        """SHA-256 of the canonical CSV serialization."""
        return hashlib.sha256(to_csv_bytes(self)).hexdigest()


def format_numeric(value: float) -> str:
    """Shortest decimal text that round-trips; integral floats drop the '.0'."""
    if isinstance(value, float) and math.isfinite(value) and value.is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(float(value))


def _format_cell(cell, kind: ColumnKind) -> str:
    if cell is None:
        return ""
    if kind is ColumnKind.NUMERIC:
        return format_numeric(cell)
    return str(cell)


def to_csv_bytes(table: Table) -> bytes:
    """Canonical CSV serialization (UTF-8, header row, '\\n' line ends)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.column_names())
    kinds = [c.schema.kind for c in table.columns]
    for row in range(table.row_count):
        writer.writerow(
            _format_cell(col.cells[row], kind)
            for col, kind in zip(table.columns, kinds)
        )
    return buf.getvalue().encode("utf-8")


def write_csv(table: Table, dest) -> None:
    """Write the table to a path or binary/text stream."""
    data = to_csv_bytes(table)
    if isinstance(dest, (str, Path)):
        Path(dest).write_bytes(data)
    elif hasattr(dest, "buffer"):
        dest.buffer.write(data)
    elif isinstance(dest, io.TextIOBase):
        dest.write(data.decode("utf-8"))
    else:
        dest.write(data)


def _parse_number(text: str) -> float | None:
    try:
        value = float(text)
    except ValueError:
        return None
    return value


def load_csv(source, schema_hints: dict[str, ColumnKind] | None = None) -> Table:
    """Parse a header-rowed UTF-8 CSV into a typed table.

    Empty fields become missing. A column is numeric when every non-missing
    cell parses as a real number, text otherwise; schema_hints override the
    inference per column.
    """
    hints = schema_hints or {}
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    else:
        rows = list(csv.reader(source))
    if not rows:
        raise CsvFormatError("empty CSV: no header row")
    header = rows[0]
    if len(set(header)) != len(header):
        dupes = sorted({h for h in header if header.count(h) > 1})
        raise CsvFormatError(f"duplicate header names: {dupes}")
    width = len(header)
    body = []
    for lineno, row in enumerate(rows[1:], start=2):
        if row == [] and width == 1:
            row = [""]  # a blank line in a one-column file is a missing cell
        if len(row) != width:
            raise CsvFormatError(f"ragged row at line {lineno}: {len(row)} fields, expected {width}")
        body.append(row)

    columns = []
    for idx, name in enumerate(header):
        raw = [row[idx] for row in body]
        cells: list = [None if v == "" else v for v in raw]
        hint = hints.get(name)
        if hint is None:
            present = [v for v in cells if v is not None]
            numeric = bool(present) and all(_parse_number(v) is not None for v in present)
            kind = ColumnKind.NUMERIC if numeric else ColumnKind.TEXT
        else:
            kind = ColumnKind(hint)
        if kind is ColumnKind.NUMERIC:
            parsed = []
            for rowno, v in enumerate(cells, start=2):
                if v is None:
                    parsed.append(None)
                    continue
                num = _parse_number(v)
                if num is None:
                    raise CsvFormatError(
                        f"column {name!r} hinted numeric but line {rowno} has non-numeric {v!r}"
                    )
                parsed.append(num)
            cells = parsed
        columns.append(Column(ColumnSchema(name, kind), cells))
    return Table(columns)
