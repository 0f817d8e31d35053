"""Fact synthesis over numeric series.

Each operation returns structured :class:`Fact` records; rendering into
sentences happens in :mod:`ttgen.realization`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Optional, Sequence

from ttgen.table import CellKind, Series, Table, all_series

REL_TOL = 1e-9


class AlignmentError(ValueError):
    """Two series compared pointwise do not share their point labels."""


class Kind(IntEnum):
    """Operation kinds; the integer value is the template index."""

    NON_NUMERIC = 0
    EXTREMUM = 1
    SPECIAL_VALUE = 2
    AVG_COMPARISON = 3
    MONOTONICITY = 4
    TREND = 5
    RANGE_COMPARISON = 6

    @property
    def key(self) -> str:
        return self.name.lower()

    @classmethod
    def from_key(cls, key: str) -> "Kind":
        try:
            return cls[key.upper()]
        except KeyError:
            raise ValueError(f"unknown fact kind {key!r}") from None


DIRECTIONS: dict[Kind, tuple[Optional[str], ...]] = {
    Kind.NON_NUMERIC: (None,),
    Kind.EXTREMUM: ("max", "min"),
    Kind.SPECIAL_VALUE: (None,),
    Kind.AVG_COMPARISON: ("above", "below"),
    Kind.MONOTONICITY: ("increase", "decrease"),
    Kind.TREND: ("increase", "decrease", "inc_then_dec", "dec_then_inc", "flat", "mixed"),
    Kind.RANGE_COMPARISON: ("greater", "less"),
}


@dataclass(frozen=True)
class Fact:
    kind: Kind
    series_label: str
    start_label: str
    end_label: str
    direction: Optional[str] = None
    value: Optional[float] = None
    value_text: Optional[str] = None
    point_label: Optional[str] = None
    second_series_label: Optional[str] = None

    def __post_init__(self) -> None:
        if self.direction not in DIRECTIONS[self.kind]:
            raise ValueError(f"direction {self.direction!r} invalid for {self.kind.name}")
        has_value = self.kind in (Kind.EXTREMUM, Kind.SPECIAL_VALUE)
        if (self.value is not None) != has_value:
            raise ValueError(f"{self.kind.name} fact value presence mismatch")
        if (self.second_series_label is not None) != (self.kind is Kind.RANGE_COMPARISON):
            raise ValueError("second_series_label is for range comparisons only")

    @property
    def template_index(self) -> int:
        return int(self.kind)

    def fingerprint_key(self) -> str:
        parts = (
            self.kind.key,
            self.direction or "",
            self.series_label,
            self.second_series_label or "",
            self.start_label,
            self.end_label,
            self.point_label or "",
        )
        return "\x1f".join(parts)


def close(x: float, y: float) -> bool:
    return abs(x - y) <= REL_TOL * max(1.0, abs(x), abs(y))


def maximal_runs(flags: Sequence[bool], min_len: int) -> list[tuple[int, int]]:
    """Maximal runs of consecutive true points, as inclusive index pairs."""
    runs = []
    start = None
    for i, f in enumerate(list(flags) + [False]):
        if f and start is None:
            start = i
        elif not f and start is not None:
            if i - start >= min_len:
                runs.append((start, i - 1))
            start = None
    return runs


def maximal_step_runs(steps: Sequence[bool], min_points: int) -> list[tuple[int, int]]:
    """Maximal point intervals whose every consecutive step satisfies the predicate.

    ``steps[i]`` describes the move from point i to point i+1; a run of m
    steps spans m+1 points.
    """
    return [(s, e + 1) for s, e in maximal_runs(steps, max(1, min_points - 1))]


def _usable(s: Series, min_len: int) -> bool:
    return len(s) >= min_len and s.is_numeric


def extremum_facts(s: Series) -> list[Fact]:
    if not _usable(s, 2):
        return []
    xs = s.numbers()
    facts = []
    for direction, best in (("max", max(xs)), ("min", min(xs))):
        i = xs.index(best)
        facts.append(
            Fact(
                Kind.EXTREMUM,
                s.label,
                s.point_labels[i],
                s.point_labels[i],
                direction=direction,
                value=best,
                value_text=s.values[i].text,
                point_label=s.point_labels[i],
            )
        )
    return facts


_NUM_TOKEN = re.compile(r"\d+(?:\.\d+)?")


def label_keys(label: str) -> list[str]:
    """Strings whose presence in a text counts as a mention of ``label``.

    The label itself, plus each number inside it, so that a header like
    "Year 2000" is matched by "2000年" or "after 2000".
    """
    return [label, *_NUM_TOKEN.findall(label)]


def _contains_key(text: str, key: str) -> bool:
    if not key[0].isdigit():
        return key in text
    # numbers must not be part of a longer number
    pattern = r"(?<![\d.])" + re.escape(key) + r"(?![\d]|\.\d)"
    return re.search(pattern, text) is not None


def mentions_label(label: str, text: str) -> bool:
    return any(_contains_key(text, k) for k in label_keys(label))


def special_value_facts(s: Series, q_context: str) -> list[Fact]:
    if not _usable(s, 1):
        return []
    hits = [i for i, lab in enumerate(s.point_labels) if mentions_label(lab, q_context)]
    if not hits:
        hits = list(range(len(s)))
    return [
        Fact(
            Kind.SPECIAL_VALUE,
            s.label,
            s.point_labels[i],
            s.point_labels[i],
            value=s.values[i].numeric_value,
            value_text=s.values[i].text,
            point_label=s.point_labels[i],
        )
        for i in hits
    ]


def _interval_fact(kind: Kind, s: Series, direction: str, run: tuple[int, int]) -> Fact:
    return Fact(kind, s.label, s.point_labels[run[0]], s.point_labels[run[1]], direction)


def avg_comparison_facts(s: Series) -> list[Fact]:
    if not _usable(s, 2):
        return []
    xs = s.numbers()
    mu = sum(xs) / len(xs)
    above = [x > mu and not close(x, mu) for x in xs]
    below = [x < mu and not close(x, mu) for x in xs]
    runs = [(r, "above") for r in maximal_runs(above, 2)]
    runs += [(r, "below") for r in maximal_runs(below, 2)]
    runs.sort()
    return [_interval_fact(Kind.AVG_COMPARISON, s, d, r) for r, d in runs]


def monotonicity_facts(s: Series) -> list[Fact]:
    if not _usable(s, 2):
        return []
    xs = s.numbers()
    pairs = list(zip(xs, xs[1:]))
    up = [b > a and not close(a, b) for a, b in pairs]
    down = [b < a and not close(a, b) for a, b in pairs]
    runs = [(r, "increase") for r in maximal_step_runs(up, 3)]
    runs += [(r, "decrease") for r in maximal_step_runs(down, 3)]
    runs.sort()
    return [_interval_fact(Kind.MONOTONICITY, s, d, r) for r, d in runs]


def trend_direction(xs: Sequence[float]) -> str:
    collapsed = [xs[0]]
    for x in xs[1:]:
        if not close(x, collapsed[-1]):
            collapsed.append(x)
    signs = [1 if b > a else -1 for a, b in zip(collapsed, collapsed[1:])]
    blocks = [sg for i, sg in enumerate(signs) if i == 0 or sg != signs[i - 1]]
    if not blocks:
        return "flat"
    if len(blocks) == 1:
        return "increase" if blocks[0] > 0 else "decrease"
    if len(blocks) == 2:
        return "inc_then_dec" if blocks[0] > 0 else "dec_then_inc"
    return "mixed"


def trend_fact(s: Series) -> Optional[Fact]:
    if not _usable(s, 3):
        return None
    return Fact(
        Kind.TREND,
        s.label,
        s.point_labels[0],
        s.point_labels[-1],
        trend_direction(s.numbers()),
    )


def range_comparison_facts(a: Series, b: Series) -> list[Fact]:
    if a.point_labels != b.point_labels:
        raise AlignmentError(f"series {a.label!r} and {b.label!r} are not aligned")
    if not (_usable(a, 2) and _usable(b, 2)):
        return []
    xs, ys = a.numbers(), b.numbers()
    greater = [x > y and not close(x, y) for x, y in zip(xs, ys)]
    less = [x < y and not close(x, y) for x, y in zip(xs, ys)]
    runs = [(r, "greater") for r in maximal_runs(greater, 2)]
    runs += [(r, "less") for r in maximal_runs(less, 2)]
    runs.sort()
    return [
        Fact(
            Kind.RANGE_COMPARISON,
            a.label,
            a.point_labels[r[0]],
            a.point_labels[r[1]],
            d,
            second_series_label=b.label,
        )
        for r, d in runs
    ]


def nonnumeric_facts(t: Table) -> list[Fact]:
    return [
        Fact(Kind.NON_NUMERIC, rh, ch, ch, value_text=cell.text, point_label=ch)
        for rh, ch, cell in t.iter_cells()
        if cell.kind is CellKind.TEXT
    ]


_PER_SERIES: tuple[Callable[[Series, str], list[Fact]], ...] = (
    lambda s, q: extremum_facts(s),
    special_value_facts,
    lambda s, q: avg_comparison_facts(s),
    lambda s, q: monotonicity_facts(s),
    lambda s, q: [f for f in (trend_fact(s),) if f is not None],
)


def table_facts(t: Table, q_context: str) -> list[Fact]:
    facts: list[Fact] = []
    for axis in t.series_axes:
        series = all_series(t, axis)
        for i, s in enumerate(series):
            # a single-point series only restates a cell of the orthogonal series
            if len(s) < 2:
                continue
            for op in _PER_SERIES:
                facts.extend(op(s, q_context))
            for other in series[i + 1 :]:
                facts.extend(range_comparison_facts(s, other))
    facts.extend(nonnumeric_facts(t))
    return facts


def generate_all(tables: Sequence[Table], q_context: str) -> list[Fact]:
    """Apply every operation to every series of every table.

    Tables that declare a ``series_axis`` contribute series along that axis
    only; otherwise both row and column series are used.

    Order is deterministic: table, axis (rows first), series index, kind.
    Range comparisons of a pair are listed under the lower index.
    """
    facts: list[Fact] = []
    for t in tables:
        facts.extend(table_facts(t, q_context))
    return facts
