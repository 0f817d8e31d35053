"""Table data model, record/CSV parsing, series extraction and linearization."""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Mapping, Optional, Sequence


class SchemaError(ValueError):
    """A table record does not conform to the corpus schema."""


class CellKind(str, Enum):
    NUMERIC = "numeric"
    TEXT = "text"
    EMPTY = "empty"


class Axis(str, Enum):
    ROW = "row"
    COLUMN = "column"


_NUMERIC_RE = re.compile(
    r"^(?P<num>[+\-−]?(?:\d+(?:\.\d*)?|\.\d+))\s*(?P<unit>[^\d\s.+\-−][^\d]*)?$"
)


@dataclass(frozen=True)
class Cell:
    kind: CellKind
    raw_text: str
    numeric_value: Optional[float] = None
    unit: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind is CellKind.NUMERIC:
            if self.numeric_value is None or not math.isfinite(self.numeric_value):
                raise SchemaError(f"numeric cell {self.raw_text!r} has no finite value")
        elif self.numeric_value is not None:
            raise SchemaError("only numeric cells carry a numeric value")

    @classmethod
    def parse(cls, raw: str) -> "Cell":
        """Classify a raw cell string.

        A cell is numeric iff, after trimming whitespace and at most one
        trailing non-digit unit token, the rest is a signed decimal.
        """
        if not isinstance(raw, str):
            raise SchemaError(f"cell must be a string, got {type(raw).__name__}")
        text = raw.strip()
        if not text:
            return cls(CellKind.EMPTY, raw)
        m = _NUMERIC_RE.match(text)
        if m is None:
            return cls(CellKind.TEXT, raw)
        value = float(m.group("num").replace("−", "-"))
        if not math.isfinite(value):
            return cls(CellKind.TEXT, raw)
        unit = m.group("unit")
        unit = unit.strip() if unit else None
        return cls(CellKind.NUMERIC, raw, value, unit or None)

    @property
    def is_numeric(self) -> bool:
        return self.kind is CellKind.NUMERIC

    @property
    def text(self) -> str:
        """Surface form used in rendered sentences."""
        return self.raw_text.strip()


@dataclass(frozen=True)
class Table:
    row_headers: tuple[str, ...]
    col_headers: tuple[str, ...]
    cells: tuple[tuple[Cell, ...], ...]
    caption: Optional[str] = None
    # axis holding the variable names; None means both axes carry series
    series_axis: Optional[Axis] = None

    def __post_init__(self) -> None:
        if self.series_axis is not None:
            object.__setattr__(self, "series_axis", Axis(self.series_axis))
        if not self.row_headers or not self.col_headers:
            raise SchemaError("table needs at least one row header and one column header")
        for h in (*self.row_headers, *self.col_headers):
            if not isinstance(h, str) or not h.strip():
                raise SchemaError(f"empty header {h!r}")
        if len(self.cells) != len(self.row_headers):
            raise SchemaError(
                f"grid has {len(self.cells)} rows but {len(self.row_headers)} row headers"
            )
        width = len(self.col_headers)
        for i, row in enumerate(self.cells):
            if len(row) != width:
                raise SchemaError(f"row {i} has {len(row)} cells, expected {width}")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.row_headers), len(self.col_headers)

    def iter_cells(self) -> Iterable[tuple[str, str, Cell]]:
        for rh, row in zip(self.row_headers, self.cells):
            for ch, cell in zip(self.col_headers, row):
                yield rh, ch, cell

    def transpose(self) -> "Table":
        cols = tuple(tuple(row[j] for row in self.cells) for j in range(len(self.col_headers)))
        flipped = {Axis.ROW: Axis.COLUMN, Axis.COLUMN: Axis.ROW}.get(self.series_axis)  # type: ignore[arg-type]
        return Table(self.col_headers, self.row_headers, cols, self.caption, flipped)

    @property
    def series_axes(self) -> tuple[Axis, ...]:
        return (self.series_axis,) if self.series_axis else (Axis.ROW, Axis.COLUMN)

    def to_record(self) -> dict[str, Any]:
        record: dict[str, Any] = {}
        if self.caption is not None:
            record["caption"] = self.caption
        record["row_headers"] = list(self.row_headers)
        record["col_headers"] = list(self.col_headers)
        record["cells"] = [[c.raw_text for c in row] for row in self.cells]
        if self.series_axis is not None:
            record["series_axis"] = self.series_axis.value
        return record


@dataclass(frozen=True)
class Series:
    axis: Axis
    index: int
    label: str
    point_labels: tuple[str, ...]
    values: tuple[Cell, ...]

    def __post_init__(self) -> None:
        if len(self.point_labels) != len(self.values):
            raise ValueError("point_labels and values differ in length")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def is_numeric(self) -> bool:
        return all(c.is_numeric for c in self.values)

    def numbers(self) -> list[float]:
        """Numeric values; raises if any cell is not numeric."""
        if not self.is_numeric:
            raise ValueError(f"series {self.label!r} has non-numeric cells")
        return [c.numeric_value for c in self.values]  # type: ignore[misc]


def parse_table(record: Mapping[str, Any]) -> Table:
    """Build a validated :class:`Table` from a corpus table record."""
    if not isinstance(record, Mapping):
        raise SchemaError("table record must be an object")
    for key in ("row_headers", "col_headers", "cells"):
        if key not in record:
            raise SchemaError(f"table record missing {key!r}")
    rows, cols, grid = record["row_headers"], record["col_headers"], record["cells"]
    if not isinstance(rows, list) or not isinstance(cols, list) or not isinstance(grid, list):
        raise SchemaError("row_headers, col_headers and cells must be lists")
    for row in grid:
        if not isinstance(row, list):
            raise SchemaError("cells must be a list of lists")
    caption = record.get("caption")
    if caption is not None and not isinstance(caption, str):
        raise SchemaError("caption must be a string")
    axis = record.get("series_axis")
    if axis is not None and axis not in ("row", "column"):
        raise SchemaError(f"series_axis must be 'row' or 'column', got {axis!r}")
    cells = tuple(tuple(Cell.parse(raw) for raw in row) for row in grid)
    return Table(tuple(rows), tuple(cols), cells, caption, Axis(axis) if axis else None)


def parse_csv(text: str, caption: Optional[str] = None) -> Table:
    """First row holds column headers, first column row headers; cell (0,0) is ignored."""
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if len(rows) < 2:
        raise SchemaError("CSV table needs a header row and at least one data row")
    col_headers = rows[0][1:]
    return parse_table(
        {
            "caption": caption,
            "row_headers": [r[0] for r in rows[1:]],
            "col_headers": col_headers,
            "cells": [r[1:] for r in rows[1:]],
        }
    )


def extract_series(t: Table, axis: Axis | str, index: int) -> Series:
    axis = Axis(axis)
    if axis is Axis.ROW:
        if not 0 <= index < len(t.row_headers):
            raise IndexError(f"row {index} out of range for {len(t.row_headers)} rows")
        return Series(axis, index, t.row_headers[index], t.col_headers, t.cells[index])
    if not 0 <= index < len(t.col_headers):
        raise IndexError(f"column {index} out of range for {len(t.col_headers)} columns")
    values = tuple(row[index] for row in t.cells)
    return Series(axis, index, t.col_headers[index], t.row_headers, values)


def all_series(t: Table, axis: Axis | str) -> list[Series]:
    axis = Axis(axis)
    n = len(t.row_headers) if axis is Axis.ROW else len(t.col_headers)
    return [extract_series(t, axis, i) for i in range(n)]


def linearize(t: Table) -> str:
    """Linearization baseline: scan rows left to right, top to bottom."""
    return " ".join(f"{rh} at {ch} is {cell.raw_text}." for rh, ch, cell in t.iter_cells())


def numeric_fraction(tables: Sequence[Table]) -> float:
    """Share of tables whose non-empty content cells are all numeric."""
    if not tables:
        raise ValueError("numeric_fraction of an empty table list")
    numeric = sum(
        all(c.is_numeric for _, _, c in t.iter_cells() if c.kind is not CellKind.EMPTY)
        for t in tables
    )
    return numeric / len(tables)
