"""Table-to-text candidate generation and question-aware sentence ranking."""

from ttgen.table import Cell, Series, Table, parse_table, extract_series, linearize
from ttgen.synthesis import Fact, Kind, generate_all
from ttgen.realization import Candidate, TemplateSet, render, render_all
from ttgen.ranking import RankerModel, LabeledQuestion, TrainConfig
from ttgen.knowledge import KnowledgeBase

__all__ = [
    "Cell",
    "Series",
    "Table",
    "parse_table",
    "extract_series",
    "linearize",
    "Fact",
    "Kind",
    "generate_all",
    "Candidate",
    "TemplateSet",
    "render",
    "render_all",
    "RankerModel",
    "LabeledQuestion",
    "TrainConfig",
    "KnowledgeBase",
]

__version__ = "0.1.0"
