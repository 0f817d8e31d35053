import pytest
from hypothesis import given
from hypothesis import strategies as st

from ttgen.realization import (
    Candidate,
    TemplateError,
    TemplateSet,
    fingerprint,
    render,
    render_all,
    short_end,
    templation_paragraph,
)
from ttgen.synthesis import DIRECTIONS, Fact, Kind, generate_all
from ttgen.table import parse_table


def test_default_set_complete(templates):
    assert templates.missing() == []
    n = sum(len(d) for d in DIRECTIONS.values())
    assert len(templates.patterns) == n == 16


@pytest.mark.parametrize(
    "fact, text",
    [
        (Fact(Kind.EXTREMUM, "ELP", "Year 2000", "Year 2000", "max", 2.504, "2.504", "Year 2000"),
         "ELP reaches a maximum of 2.504 at Year 2000."),
        (Fact(Kind.SPECIAL_VALUE, "ELP", "Year 2000", "Year 2000", None, 2.504, "2.504", "Year 2000"),
         "ELP at Year 2000 is 2.504."),
        (Fact(Kind.AVG_COMPARISON, "ELP", "Year 2000", "Year 2002", "above"),
         "ELP is relatively large between Year 2000 and 2002."),
        (Fact(Kind.MONOTONICITY, "ELP", "Year 2000", "Year 2003", "decrease"),
         "ELP decreases between Year 2000 and 2003."),
        (Fact(Kind.TREND, "ELP", "Year 1998", "Year 2003", "inc_then_dec"),
         "ELP generally increases and then decreases."),
        (Fact(Kind.RANGE_COMPARISON, "a", "p1", "p2", "greater", second_series_label="b"),
         "a is greater than b between p1 and p2."),
        (Fact(Kind.NON_NUMERIC, "Region A", "Climate", "Climate", value_text="temperate", point_label="Climate"),
         "Region A Climate is temperate."),
    ],
)
def test_render_examples(fact, text, templates):
    c = render(fact, templates)
    assert c.sentence == text
    assert c.template_index == int(fact.kind)
    assert c.usefulness_label is None


@pytest.mark.parametrize(
    "start, end, out",
    [("Year 2000", "Year 2003", "2003"), ("2000", "2003", "2003"), ("Q1 2000", "Q2 2000", "Q2 2000"),
     ("Year 2000", "Year 2000", "2000"), ("a b c", "a b d", "d")],
)
def test_short_end(start, end, out):
    assert short_end(start, end) == out


def test_parse_custom_and_errors():
    ts = TemplateSet.parse("trend.flat = {series} is level.", require_complete=False)
    assert ts.missing() and ("trend.flat" not in ts.missing())
    with pytest.raises(TemplateError, match="line 1"):
        TemplateSet.parse("no equals sign", require_complete=False)
    with pytest.raises(TemplateError, match="line 2"):
        TemplateSet.parse("# c\nbogus.x = {series}", require_complete=False)
    with pytest.raises(TemplateError, match="unknown direction"):
        TemplateSet.parse("trend.sideways = {series}", require_complete=False)
    with pytest.raises(TemplateError, match="series2"):
        TemplateSet.parse("trend.flat = {series} vs {series2}", require_complete=False)
    with pytest.raises(TemplateError, match="lacks"):
        TemplateSet.parse("trend.flat = {series}")


def test_missing_pattern_on_render():
    ts = TemplateSet.parse("trend.flat = {series} is level.", require_complete=False)
    with pytest.raises(TemplateError, match="no pattern"):
        render(Fact(Kind.TREND, "s", "a", "b", "increase"), ts)


def test_load_file(tmp_path, templates):
    p = tmp_path / "t.txt"
    lines = [f"{k.key}{'.' + d if d else ''} = X {{series}} {k.key} {d}" for k, ds in DIRECTIONS.items() for d in ds]
    p.write_text("\n".join(lines), encoding="utf-8")
    ts = TemplateSet.load(p)
    c = render(Fact(Kind.TREND, "s", "a", "b", "flat"), ts)
    assert c.sentence == "X s trend flat"


def test_candidate_consistency():
    f = Fact(Kind.TREND, "s", "a", "b", "flat")
    with pytest.raises(ValueError):
        Candidate("x", 4, f)
    with pytest.raises(ValueError):
        Candidate("", 5, f)


def test_fingerprint_ignores_wording():
    f = Fact(Kind.TREND, "s", "a", "b", "flat")
    ts = TemplateSet.parse("trend.flat = {series} is level.", require_complete=False)
    assert render(f, ts).fingerprint == render_all([f])[0].fingerprint == fingerprint(f)
    g = Fact(Kind.TREND, "s", "a", "b", "mixed")
    assert fingerprint(f) != fingerprint(g)


@st.composite
def tables(draw):
    n = draw(st.integers(1, 3))
    m = draw(st.integers(2, 6))
    cells = [[draw(st.sampled_from(["1", "2", "3", "-1", "x"])) for _ in range(m)] for _ in range(n)]
    return parse_table({"row_headers": [f"r{i}" for i in range(n)],
                        "col_headers": [f"c{j}" for j in range(m)], "cells": cells})


@given(tables())
def test_distinct_facts_give_distinct_sentences(t):
    facts = generate_all([t], "")
    cands = render_all(facts)
    by_sentence = {}
    for c in cands:
        by_sentence.setdefault(c.sentence, set()).add(c.fingerprint)
    assert all(len(v) == 1 for v in by_sentence.values())
    assert len({c.fingerprint for c in cands}) == len(set(facts))


def _cands(sentences):
    f = Fact(Kind.TREND, "s", "a", "b", "flat")
    return [Candidate(s, 5, f) for s in sentences]


def test_templation_ordering_and_budget():
    cands = _cands(["ccc ccc.", "a.", "bbbb."])
    assert templation_paragraph(cands, 100) == "a. bbbb. ccc ccc."
    assert templation_paragraph(cands, 8) == "a. bbbb."
    assert templation_paragraph(cands, 1) == ""
    with pytest.raises(ValueError):
        templation_paragraph(cands, 0)


@given(st.lists(st.text(alphabet="abc ", min_size=1, max_size=15).map(lambda s: s + "."), max_size=10),
       st.integers(1, 80))
def test_templation_budget_property(sentences, budget):
    out = templation_paragraph(_cands(sentences), budget)
    assert len(out) <= budget
    kept = sorted(sentences, key=len)
    # output is a prefix of the length-sorted list
    joined = [" ".join(kept[:i]) for i in range(len(kept) + 1)]
    assert out in joined


def test_templation_elp(elp_table):
    from ttgen.harness import TEMPLATION_BUDGET

    cands = render_all(generate_all([elp_table], "2000年以后"))
    para = templation_paragraph(cands, TEMPLATION_BUDGET)
    five = [
        "ELP reaches a maximum of 2.504 at Year 2000.",
        "ELP at Year 2000 is 2.504.",
        "ELP is relatively large between Year 2000 and 2002.",
        "ELP decreases between Year 2000 and 2003.",
        "ELP generally increases and then decreases.",
    ]
    positions = [para.index(s) for s in sorted(five, key=len)]
    assert positions == sorted(positions)
