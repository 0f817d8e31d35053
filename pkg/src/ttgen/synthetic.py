"""Seeded synthetic tabular-scenario corpus.

Each task has one table of several variables over consecutive years. The
question names one variable and uses a cue phrase pointing at one
operation; a candidate is labeled useful iff it is about a variable named
in the question and comes from the cued operation. Options are built from
candidate sentences so the answer can be read off the useful sentence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ttgen.harness import Task, candidates_for
from ttgen.realization import Candidate
from ttgen.synthesis import Kind, mentions_label
from ttgen.table import parse_table

VARIABLES = (
    "rainfall", "runoff", "evaporation", "temperature", "population", "output",
    "GDP", "ELP", "sediment", "snowfall", "migration", "irrigation",
)
REGIONS = ("the river basin", "the county", "the delta", "the plateau", "the oasis", "the valley")

CUES: dict[Kind, tuple[str, ...]] = {
    Kind.EXTREMUM: ("peak value", "most extreme reading", "record level"),
    Kind.SPECIAL_VALUE: ("exact figure in {point}", "reading for {point}", "value recorded in {point}"),
    Kind.AVG_COMPARISON: ("usual level", "typical norm", "long run mean"),
    Kind.MONOTONICITY: ("steady run", "consecutive change", "uninterrupted stretch"),
    Kind.TREND: ("overall pattern", "general tendency", "broad shape"),
    Kind.RANGE_COMPARISON: ("contrast with {other}", "gap relative to {other}", "standing against {other}"),
}
FILLERS = (
    "Based on the scenario,", "According to the table,", "Judging from the data,",
    "From the figures given,", "Considering the material,",
)


@dataclass
class SyntheticConfig:
    n_tasks: int = 20
    n_rows: int = 3
    n_cols: int = 6
    first_year: int = 2001
    seed: int = 0
    tasks_per_scenario: int = 1


def _series(rng: np.random.Generator, n: int) -> list[float]:
    shape = rng.integers(4)
    base = rng.uniform(1, 50)
    t = np.arange(n)
    if shape == 0:
        xs = base + rng.uniform(0.5, 3) * t
    elif shape == 1:
        peak = rng.integers(1, n - 1)
        xs = base + rng.uniform(0.5, 3) * (n - np.abs(t - peak))
    elif shape == 2:
        xs = base + rng.uniform(0.5, 3) * np.abs(t - rng.integers(1, n - 1))
    else:
        xs = base + rng.normal(0, 3, n).cumsum()
    return [round(float(x + rng.normal(0, 0.2)), 2) for x in xs]


def _option_text(c: Candidate) -> str:
    s = c.sentence.rstrip(".")
    label = c.fact.series_label
    return s[len(label) :].strip() if s.startswith(label) else s


def _useful(c: Candidate, question: str, kind: Kind) -> bool:
    f = c.fact
    named = mentions_label(f.series_label, question) or (
        f.second_series_label is not None and mentions_label(f.second_series_label, question)
    )
    return named and c.template_index == int(kind)


def _make_task(rng: np.random.Generator, cfg: SyntheticConfig, idx: int, table_rec: dict,
               passage: str, scenario: str) -> Optional[Task]:
    rows = table_rec["row_headers"]
    target = rows[rng.integers(len(rows))]
    kind = Kind(int(rng.integers(1, 7)))
    cue = CUES[kind][rng.integers(len(CUES[kind]))]
    point = table_rec["col_headers"][rng.integers(len(table_rec["col_headers"]))]
    other = next(r for r in rng.permutation(rows) if r != target)
    cue = cue.format(point=point, other=other)
    question = f"{FILLERS[rng.integers(len(FILLERS))]} which statement about the {cue} of {target} holds?"

    probe = Task(f"t{idx:04d}", passage, (parse_table(table_rec),), question, ("", "", "", ""), 0)
    cands = candidates_for(probe)
    useful = [c for c in cands if _useful(c, question, kind)]
    if not useful:
        return None
    # distractors: same variable, other operations, distinct wording
    seen = {_option_text(useful[0])}
    distractors = []
    for j in rng.permutation(len(cands)):
        c = cands[j]
        text = _option_text(c)
        if c.fact.series_label == target and not _useful(c, question, kind) and text not in seen:
            distractors.append(text)
            seen.add(text)
        if len(distractors) == 3:
            break
    if len(distractors) < 3:
        return None
    answer = int(rng.integers(4))
    options = distractors[:answer] + [_option_text(useful[0])] + distractors[answer:]
    labels = {c.fingerprint: _useful(c, question, kind) for c in cands}
    return Task(f"t{idx:04d}", passage, probe.tables, question, tuple(options), answer, labels, scenario)


def make_corpus(cfg: SyntheticConfig) -> list[Task]:
    rng = np.random.default_rng(cfg.seed)
    tasks: list[Task] = []
    scenario = 0
    while len(tasks) < cfg.n_tasks:
        names = [str(v) for v in rng.choice(VARIABLES, cfg.n_rows, replace=False)]
        years = [f"Year {cfg.first_year + j}" for j in range(cfg.n_cols)]
        rec = {
            "row_headers": names,
            "col_headers": years,
            "cells": [[f"{x:.2f}" for x in _series(rng, cfg.n_cols)] for _ in names],
            "series_axis": "row",
        }
        region = REGIONS[rng.integers(len(REGIONS))]
        passage = f"The table lists {', '.join(names[:-1])} and {names[-1]} of {region}."
        sid = f"s{scenario:04d}"
        scenario += 1
        for _ in range(cfg.tasks_per_scenario):
            task = _make_task(rng, cfg, len(tasks), rec, passage, sid)
            if task is not None:
                tasks.append(task)
            if len(tasks) == cfg.n_tasks:
                break
    return tasks
