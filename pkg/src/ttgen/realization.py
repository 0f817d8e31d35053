"""Rendering facts into sentences, and the Templation baseline."""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from ttgen.synthesis import DIRECTIONS, Fact, Kind


class TemplateError(ValueError):
    pass


_COMMON = {"series", "start", "end"}
PLACEHOLDERS: dict[Kind, frozenset[str]] = {
    Kind.NON_NUMERIC: frozenset(_COMMON | {"point", "value"}),
    Kind.EXTREMUM: frozenset(_COMMON | {"point", "value"}),
    Kind.SPECIAL_VALUE: frozenset(_COMMON | {"point", "value"}),
    Kind.AVG_COMPARISON: frozenset(_COMMON),
    Kind.MONOTONICITY: frozenset(_COMMON),
    Kind.TREND: frozenset(_COMMON),
    Kind.RANGE_COMPARISON: frozenset(_COMMON | {"series2"}),
}

TemplateKey = tuple[Kind, Optional[str]]


def _fields(pattern: str) -> set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(pattern) if name is not None}


@dataclass(frozen=True)
class TemplateSet:
    patterns: Mapping[TemplateKey, str]

    def __post_init__(self) -> None:
        for (kind, direction), pattern in self.patterns.items():
            extra = _fields(pattern) - PLACEHOLDERS[kind]
            if extra:
                raise TemplateError(
                    f"{_key_str(kind, direction)}: placeholders {sorted(extra)} not provided by the fact"
                )

    def missing(self) -> list[str]:
        return [
            _key_str(kind, d)
            for kind, dirs in DIRECTIONS.items()
            for d in dirs
            if (kind, d) not in self.patterns
        ]

    @classmethod
    def parse(cls, text: str, require_complete: bool = True) -> "TemplateSet":
        patterns: dict[TemplateKey, str] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, pattern = line.partition("=")
            if not sep:
                raise TemplateError(f"line {lineno}: expected 'kind.direction = pattern'")
            kind_key, _, direction = key.strip().partition(".")
            try:
                kind = Kind.from_key(kind_key)
            except ValueError as e:
                raise TemplateError(f"line {lineno}: {e}") from None
            dir_value = direction or None
            if dir_value not in DIRECTIONS[kind]:
                raise TemplateError(f"line {lineno}: unknown direction {direction!r} for {kind_key}")
            patterns[(kind, dir_value)] = pattern.strip()
        ts = cls(patterns)
        if require_complete and ts.missing():
            raise TemplateError(f"template set lacks patterns for {ts.missing()}")
        return ts

    @classmethod
    def load(cls, path: str | Path) -> "TemplateSet":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> "TemplateSet":
        text = resources.files("ttgen").joinpath("data/templates_en.txt").read_text(encoding="utf-8")
        return cls.parse(text)


def _key_str(kind: Kind, direction: Optional[str]) -> str:
    return kind.key if direction is None else f"{kind.key}.{direction}"


def short_end(start: str, end: str) -> str:
    """Drop the leading words ``end`` shares with ``start`` ("Year 2000" .. "2003")."""
    a, b = start.split(), end.split()
    n = 0
    while n < min(len(a), len(b)) - 1 and a[n] == b[n]:
        n += 1
    return " ".join(b[n:]) if n else end


@dataclass(frozen=True)
class Candidate:
    sentence: str
    template_index: int
    fact: Fact
    usefulness_label: Optional[bool] = None
    score: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.sentence:
            raise ValueError("empty candidate sentence")
        if self.template_index != self.fact.template_index:
            raise ValueError("template index inconsistent with fact kind")

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.fact)


def fingerprint(fact: Fact) -> str:
    """Stable id of a fact, independent of its wording."""
    return hashlib.sha1(fact.fingerprint_key().encode("utf-8")).hexdigest()[:16]


def render(f: Fact, ts: TemplateSet) -> Candidate:
    try:
        pattern = ts.patterns[(f.kind, f.direction)]
    except KeyError:
        raise TemplateError(f"no pattern for {_key_str(f.kind, f.direction)}") from None
    values = {
        "series": f.series_label,
        "series2": f.second_series_label,
        "start": f.start_label,
        "end": short_end(f.start_label, f.end_label),
        "point": f.point_label,
        "value": f.value_text,
    }
    for name in _fields(pattern):
        if values.get(name) is None:
            raise TemplateError(f"placeholder {{{name}}} has no value in {f.kind.name} fact")
    return Candidate(pattern.format(**values), f.template_index, f)


def render_all(facts: Iterable[Fact], ts: Optional[TemplateSet] = None) -> list[Candidate]:
    ts = ts or TemplateSet.default()
    return [render(f, ts) for f in facts]


def templation_paragraph(cands: Sequence[Candidate], budget: int) -> str:
    """All sentences, shortest first, cut at the last whole sentence within ``budget`` chars."""
    if budget <= 0:
        raise ValueError("budget must be positive")
    order = sorted(range(len(cands)), key=lambda i: len(cands[i].sentence))
    out: list[str] = []
    used = 0
    for i in order:
        s = cands[i].sentence
        need = len(s) + (1 if out else 0)
        if used + need > budget:
            break
        out.append(s)
        used += need
    return " ".join(out)
