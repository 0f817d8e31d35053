"""Regenerate the corpora bundled under src/ttgen/data/."""

import json
from pathlib import Path

from ttgen.harness import Task, candidates_for, dump_corpus
from ttgen.synthesis import Kind
from ttgen.synthetic import SyntheticConfig, make_corpus
from ttgen.table import parse_table

DATA = Path(__file__).resolve().parents[1] / "src" / "ttgen" / "data"

ELP_TABLE = {
    "caption": "ELP of the province, 1998-2003",
    "row_headers": ["ELP"],
    "col_headers": [f"Year {y}" for y in range(1998, 2004)],
    "cells": [["2.465", "2.476", "2.504", "2.490", "2.482", "2.473"]],
}


def elp_task() -> Task:
    probe = Task(
        "elp",
        "The table shows the ELP, the average educational level of the population, of a province.",
        (parse_table(ELP_TABLE),),
        "After year 2000, the ELP of the province changed mainly because of",
        (
            "the outflow of rural labor",
            "a falling birth rate",
            "the expansion of universities",
            "rising foreign investment",
        ),
        0,
    )
    labels = {
        c.fingerprint: c.fact.kind is Kind.MONOTONICITY and c.fact.direction == "decrease"
        for c in candidates_for(probe)
    }
    return Task(probe.id, probe.passage, probe.tables, probe.question, probe.options, 0, labels, "elp")


def main() -> None:
    tasks = make_corpus(SyntheticConfig(n_tasks=20, seed=0, tasks_per_scenario=2))
    (DATA / "mini_corpus.jsonl").write_text(dump_corpus(tasks), encoding="utf-8")
    (DATA / "elp_task.jsonl").write_text(dump_corpus([elp_task()]), encoding="utf-8")
    print(json.dumps({"mini_corpus": len(tasks), "elp_task": 1}))


if __name__ == "__main__":
    main()
