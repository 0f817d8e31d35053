"""Command-line entry point: generate, train, rank, eval, make-corpus.

Settings resolve in order: built-in defaults, ``--config`` file
(``key = value`` lines), ``TTGEN_<KEY>`` environment variables, flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Optional, Sequence, TextIO

from ttgen.harness import (
    SELECTORS,
    CorpusError,
    EvalSettings,
    ExternalScorer,
    Task,
    dump_corpus,
    eval_ranking,
    evaluate,
    labeled_question,
    load_corpus,
    model_ranker,
)
from ttgen.knowledge import KnowledgeBase
from ttgen.ranking import RankerModel, SchemaMismatch, TrainConfig, TrainingError, select, train
from ttgen.realization import TemplateSet
from ttgen.synthesis import Fact
from ttgen.synthetic import SyntheticConfig, make_corpus

log = logging.getLogger("ttgen")

ENV_PREFIX = "TTGEN_"


@dataclass
class RunConfig:
    k: int = 2
    epsilon: int = 2
    seed: int = 0
    folds: int = 5
    templates: Optional[str] = None
    kb: Optional[str] = None
    model: Optional[str] = None
    scorer: Optional[str] = None
    timeout: float = 30.0
    epochs: int = TrainConfig.epochs
    learning_rate: float = TrainConfig.learning_rate
    selector: str = "ttgen"
    answerer: str = "baseline"
    k_sweep: str = ""
    workers: int = 4

    def validate(self) -> None:
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.epsilon < 1:
            raise ValueError("epsilon must be at least 1")
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if self.selector not in SELECTORS:
            raise ValueError(f"selector must be one of {SELECTORS}")
        if self.answerer not in ("baseline", "random", "external"):
            raise ValueError("answerer must be baseline, random or external")

    @property
    def sweep(self) -> list[int]:
        return [int(x) for x in self.k_sweep.replace(",", " ").split()]

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs, seed=self.seed)


def _coerce(name: str, raw: Any) -> Any:
    typ = {f.name: f.type for f in fields(RunConfig)}[name]
    if raw is None:
        return None
    if typ in ("int", int):
        return int(raw)
    if typ in ("float", float):
        return float(raw)
    return str(raw)


def parse_config_file(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"config line {lineno}: expected key = value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def resolve_config(args: argparse.Namespace, environ: Optional[dict[str, str]] = None) -> RunConfig:
    environ = os.environ if environ is None else environ
    names = [f.name for f in fields(RunConfig)]
    values: dict[str, Any] = {}
    if getattr(args, "config", None):
        for key, value in parse_config_file(Path(args.config).read_text(encoding="utf-8")).items():
            if key not in names:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = _coerce(key, value)
    for name in names:
        env = environ.get(ENV_PREFIX + name.upper())
        if env is not None:
            values[name] = _coerce(name, env)
    for name in names:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = _coerce(name, flag)
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def _dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def _fact_dict(f: Fact) -> dict[str, Any]:
    d: dict[str, Any] = {
        "kind": f.kind.key,
        "series": f.series_label,
        "start": f.start_label,
        "end": f.end_label,
    }
    for key, value in (
        ("direction", f.direction),
        ("value", f.value),
        ("value_text", f.value_text),
        ("point", f.point_label),
        ("series2", f.second_series_label),
    ):
        if value is not None:
            d[key] = value
    return d


def _templates(cfg: RunConfig) -> TemplateSet:
    return TemplateSet.load(cfg.templates) if cfg.templates else TemplateSet.default()


def _kb(cfg: RunConfig) -> Optional[KnowledgeBase]:
    return KnowledgeBase.load(cfg.kb) if cfg.kb else None


def _open_out(path: Optional[str]) -> TextIO:
    return open(path, "w", encoding="utf-8", newline="\n") if path else sys.stdout


def cmd_generate(tasks: Sequence[Task], cfg: RunConfig, out: TextIO) -> int:
    ts = _templates(cfg)
    kb = _kb(cfg)
    for task in tasks:
        lq = labeled_question(task, ts, kb, cfg.epsilon)
        cands = lq.candidates if lq else []
        rows = []
        for c in cands:
            row = {
                "sentence": c.sentence,
                "template": c.template_index,
                "fingerprint": c.fingerprint,
                "fact": _fact_dict(c.fact),
            }
            if c.usefulness_label is not None:
                row["label"] = c.usefulness_label
            rows.append(row)
        out.write(_dumps({"id": task.id, "candidates": rows}) + "\n")
    return 0


def cmd_train(tasks: Sequence[Task], cfg: RunConfig, out: TextIO, log_out: TextIO) -> int:
    ts = _templates(cfg)
    kb = _kb(cfg)
    questions = [q for q in (labeled_question(t, ts, kb, cfg.epsilon) for t in tasks) if q]
    model = train(questions, cfg.train_config())
    step = max(1, cfg.epochs // 10)
    for name, trace in (("sentence", model.sentence_loss_trace), ("template", model.template_loss_trace)):
        for epoch in list(range(0, len(trace), step)) + ([len(trace) - 1] if (len(trace) - 1) % step else []):
            log_out.write(f"{name} epoch {epoch:5d} loss {trace[epoch]:.6f}\n")
    out.write(model.dumps())
    return 0


def _load_model(cfg: RunConfig) -> RankerModel:
    if not cfg.model:
        raise ValueError("--model is required")
    return RankerModel.loads(Path(cfg.model).read_text(encoding="utf-8"))


def cmd_rank(tasks: Sequence[Task], cfg: RunConfig, out: TextIO, log_out: TextIO) -> int:
    ts = _templates(cfg)
    kb = _kb(cfg)
    model = _load_model(cfg)
    questions = []
    for task in tasks:
        lq = labeled_question(task, ts, kb, cfg.epsilon)
        chosen = select(model, lq, cfg.k) if lq else []
        if lq:
            questions.append(lq)
        rows = [
            {"sentence": c.sentence, "score": c.score, "template": c.template_index, "fingerprint": c.fingerprint}
            for c in chosen
        ]
        out.write(_dumps({"id": task.id, "selected": rows}) + "\n")
    m, r, n = eval_ranking(model_ranker(model), questions)
    log_out.write(_dumps({"MAP": m, "MRR": r, "labeled_tasks": n}) + "\n")
    return 0


def cmd_eval(tasks: Sequence[Task], cfg: RunConfig, out: TextIO, log_out: TextIO) -> int:
    ts = _templates(cfg)
    kb = _kb(cfg)
    model = _load_model(cfg) if cfg.model else None
    settings = EvalSettings(
        k=cfg.k,
        epsilon=cfg.epsilon,
        folds=cfg.folds,
        seed=cfg.seed,
        selector=cfg.selector,
        answerer=cfg.answerer,
        k_sweep=cfg.sweep,
        train=cfg.train_config(),
        max_workers=cfg.workers,
    )
    scorer = ExternalScorer(cfg.scorer, cfg.timeout) if cfg.answerer == "external" and cfg.scorer else None
    try:
        report = evaluate(tasks, settings, model, ts, kb, scorer)
    finally:
        if scorer:
            scorer.close()
    log_out.write(report.format_table() + "\n")
    out.write(json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n")
    return 1 if report.unanswered else 0


def cmd_make_corpus(n_tasks: int, cfg: RunConfig, out: TextIO) -> int:
    out.write(dump_corpus(make_corpus(SyntheticConfig(n_tasks=n_tasks, seed=cfg.seed))))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ttgen", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--corpus", help="JSON-lines task corpus")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--seed", type=int)
    common.add_argument("--templates", help="template file (kind.direction = pattern)")
    common.add_argument("--kb", help="knowledge base TSV")
    common.add_argument("--epsilon", type=int, help="facts retrieved per entity mention")
    common.add_argument("--k", type=int, help="sentences selected per task")
    common.add_argument("--model", help="ranker model file")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write all candidate sentences per task")
    t = sub.add_parser("train", parents=[common], help="train both rankers on a labeled corpus")
    t.add_argument("--epochs", type=int)
    t.add_argument("--learning-rate", dest="learning_rate", type=float)
    sub.add_parser("rank", parents=[common], help="select top-k sentences and report MAP/MRR")
    e = sub.add_parser("eval", parents=[common], help="cross-validated ranking and QA evaluation")
    e.add_argument("--folds", type=int)
    e.add_argument("--selector", choices=SELECTORS)
    e.add_argument("--answerer", choices=("baseline", "random", "external"))
    e.add_argument("--scorer", help="external scorer: tcp://host:port or a command line")
    e.add_argument("--timeout", type=float, help="external scorer timeout in seconds")
    e.add_argument("--k-sweep", dest="k_sweep", help="k values to sweep, e.g. 1,2,3,4,5")
    e.add_argument("--workers", type=int, help="concurrent external scorer requests")
    e.add_argument("--epochs", type=int)
    e.add_argument("--learning-rate", dest="learning_rate", type=float)
    m = sub.add_parser("make-corpus", parents=[common], help="write a seeded synthetic corpus")
    m.add_argument("--n-tasks", dest="n_tasks", type=int, default=20)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        if args.command != "make-corpus" and not args.corpus:
            raise ValueError("--corpus is required")
        tasks = load_corpus(args.corpus) if args.corpus else []
        out = _open_out(args.out)
        try:
            if args.command == "make-corpus":
                return cmd_make_corpus(args.n_tasks, cfg, out)
            if args.command == "generate":
                return cmd_generate(tasks, cfg, out)
            if args.command == "train":
                return cmd_train(tasks, cfg, out, sys.stderr)
            if args.command == "rank":
                return cmd_rank(tasks, cfg, out, sys.stderr)
            return cmd_eval(tasks, cfg, out, sys.stderr)
        finally:
            if out is not sys.stdout:
                out.close()
    except (CorpusError, TrainingError, SchemaMismatch, ValueError, OSError) as e:
        print(f"ttgen {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
