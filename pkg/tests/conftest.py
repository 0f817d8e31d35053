import pytest
from hypothesis import settings

from ttgen.harness import load_corpus
from ttgen.realization import TemplateSet
from ttgen.table import parse_table

settings.register_profile("default", max_examples=150, deadline=None)
settings.load_profile("default")

ELP_VALUES = ["2.465", "2.476", "2.504", "2.490", "2.482", "2.473"]
ELP_RECORD = {
    "row_headers": ["ELP"],
    "col_headers": [f"Year {y}" for y in range(1998, 2004)],
    "cells": [ELP_VALUES],
}


@pytest.fixture
def elp_table():
    return parse_table(ELP_RECORD)


@pytest.fixture(scope="session")
def templates():
    return TemplateSet.default()


@pytest.fixture(scope="session")
def data_dir():
    from importlib import resources

    return resources.files("ttgen").joinpath("data")


@pytest.fixture(scope="session")
def mini_corpus(data_dir):
    return load_corpus(data_dir.joinpath("mini_corpus.jsonl"))


@pytest.fixture(scope="session")
def elp_corpus(data_dir):
    return load_corpus(data_dir.joinpath("elp_task.jsonl"))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion covered by the test")


_criteria: dict[str, list[str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    name = dict(report.user_properties).get("criterion")
    if name:
        _criteria.setdefault(name, []).append(report.outcome)


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m:
            item.user_properties.append(("criterion", m.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcomes in _criteria.items():
        status = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")
