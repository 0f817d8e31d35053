"""Corpus handling, cross-validation, evaluation and reader payloads.

Also hosts the external scorer protocol: newline-delimited JSON over the
standard streams of a spawned subprocess or over a TCP socket. One request
per task carries the four option payloads; the reply carries four scores.
"""

from __future__ import annotations

import hashlib
import json
import logging
import selectors
import shlex
import socket
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from ttgen.knowledge import DEFAULT_EPSILON, KnowledgeBase, knowledge_for, tokenize
from ttgen.ranking import (
    LabeledQuestion,
    RankerModel,
    TrainConfig,
    baseline_rank,
    mask_numbers,
    rank,
    train,
)
from ttgen.realization import Candidate, TemplateSet, render_all, templation_paragraph
from ttgen.synthesis import generate_all
from ttgen.table import SchemaError, Table, linearize, parse_table

log = logging.getLogger(__name__)

N_OPTIONS = 4
DEFAULT_K = 2
DEFAULT_TIMEOUT = 30.0


class CorpusError(ValueError):
    pass


class ScorerError(RuntimeError):
    pass


@dataclass(frozen=True)
class Task:
    id: str
    passage: str
    tables: tuple[Table, ...]
    question: str
    options: tuple[str, ...]
    gold_answer: int
    sentence_labels: Optional[Mapping[str, bool]] = None
    scenario: Optional[str] = None

    def __post_init__(self) -> None:
        if len(self.options) != N_OPTIONS:
            raise CorpusError(f"task {self.id}: expected {N_OPTIONS} options, got {len(self.options)}")
        if not 0 <= self.gold_answer < N_OPTIONS:
            raise CorpusError(f"task {self.id}: answer index {self.gold_answer} out of range")

    @property
    def scenario_key(self) -> str:
        """Explicit scenario id, else a digest of the passage and tables."""
        if self.scenario:
            return self.scenario
        blob = json.dumps([self.passage, [t.to_record() for t in self.tables]], sort_keys=True)
        return hashlib.sha1(blob.encode("utf-8")).hexdigest()[:16]

    @property
    def q_context(self) -> str:
        return self.question + " " + self.passage

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "id": self.id,
            "passage": self.passage,
            "tables": [t.to_record() for t in self.tables],
            "question": self.question,
            "options": list(self.options),
            "answer": self.gold_answer,
        }
        if self.sentence_labels is not None:
            rec["labels"] = dict(self.sentence_labels)
        if self.scenario is not None:
            rec["scenario"] = self.scenario
        return rec


def _answer_index(raw: Any) -> int:
    if isinstance(raw, bool):
        raise CorpusError("answer must be an index 0-3 or a letter A-D")
    if isinstance(raw, int):
        return raw
    if isinstance(raw, str) and len(raw) == 1 and raw.upper() in "ABCD":
        return "ABCD".index(raw.upper())
    raise CorpusError(f"answer must be an index 0-3 or a letter A-D, got {raw!r}")


def parse_task(rec: Mapping[str, Any]) -> Task:
    if not isinstance(rec, Mapping):
        raise CorpusError("task record must be an object")
    missing = [k for k in ("id", "passage", "tables", "question", "options", "answer") if k not in rec]
    if missing:
        raise CorpusError(f"task record missing {missing}")
    try:
        tables = tuple(parse_table(t) for t in rec["tables"])
    except SchemaError as e:
        raise CorpusError(f"task {rec['id']}: {e}") from None
    labels = rec.get("labels")
    if labels is not None:
        if not isinstance(labels, Mapping) or not all(isinstance(v, bool) for v in labels.values()):
            raise CorpusError(f"task {rec['id']}: labels must map fingerprints to booleans")
    return Task(
        str(rec["id"]),
        rec["passage"],
        tables,
        rec["question"],
        tuple(rec["options"]),
        _answer_index(rec["answer"]),
        labels,
        rec.get("scenario"),
    )


def read_corpus(lines: Iterable[str]) -> list[Task]:
    tasks = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            tasks.append(parse_task(json.loads(line)))
        except (json.JSONDecodeError, CorpusError) as e:
            raise CorpusError(f"line {lineno}: {e}") from None
    return tasks


def load_corpus(path: str | Path) -> list[Task]:
    with open(path, encoding="utf-8") as fh:
        return read_corpus(fh)


def dump_corpus(tasks: Sequence[Task]) -> str:
    return "".join(json.dumps(t.to_record(), ensure_ascii=False, sort_keys=True) + "\n" for t in tasks)


# -- candidates -------------------------------------------------------------


def candidates_for(task: Task, ts: Optional[TemplateSet] = None) -> list[Candidate]:
    """All rendered candidates of a task with usefulness labels attached."""
    cands = render_all(generate_all(task.tables, task.q_context), ts)
    if task.sentence_labels is None:
        return cands
    labels = task.sentence_labels
    out = []
    for c in cands:
        lab = labels.get(c.fingerprint)
        out.append(c if lab is None else Candidate(c.sentence, c.template_index, c.fact, lab))
    return out


def labeled_question(
    task: Task,
    ts: Optional[TemplateSet] = None,
    kb: Optional[KnowledgeBase] = None,
    epsilon: int = DEFAULT_EPSILON,
) -> Optional[LabeledQuestion]:
    cands = candidates_for(task, ts)
    if not cands:
        return None
    know = knowledge_for(task.passage + " " + task.question, kb, epsilon) if kb else []
    return LabeledQuestion(task.passage, task.question, cands, know)


# -- cross-validation -------------------------------------------------------


@dataclass(frozen=True)
class Fold:
    index: int
    train: tuple[str, ...]
    dev: tuple[str, ...]
    test: tuple[str, ...]


def _grouped(tasks: Sequence[Task]) -> list[list[str]]:
    groups: dict[str, list[str]] = {}
    for t in tasks:
        groups.setdefault(t.scenario_key, []).append(t.id)
    return list(groups.values())


def kfold_split(tasks: Sequence[Task], folds: int = 5, seed: int = 0, dev_fraction: float = 0.2) -> list[Fold]:
    """Scenario-grouped k-fold split with an inner train/dev holdout per fold."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    groups = _grouped(tasks)
    if len(tasks) < folds or len(groups) < folds:
        raise ValueError(f"{len(tasks)} tasks in {len(groups)} scenarios cannot fill {folds} folds")
    rng = np.random.default_rng(seed)
    order = [groups[i] for i in rng.permutation(len(groups))]
    # largest groups first so sizes stay balanced; stable among equals
    order.sort(key=len, reverse=True)
    bins: list[list[list[str]]] = [[] for _ in range(folds)]
    sizes = [0] * folds
    for g in order:
        i = min(range(folds), key=lambda f: sizes[f])
        bins[i].append(g)
        sizes[i] += len(g)
    result = []
    for i in range(folds):
        train_groups = [g for j in range(folds) if j != i for g in bins[j]]
        perm = np.random.default_rng(seed + 1 + i).permutation(len(train_groups))
        n_train = sum(len(g) for g in train_groups)
        dev: list[str] = []
        train: list[str] = []
        for gi in perm:
            g = train_groups[gi]
            (dev if len(dev) < dev_fraction * n_train else train).extend(g)
        result.append(
            Fold(i, tuple(train), tuple(dev), tuple(tid for g in bins[i] for tid in g))
        )
    return result


# -- ranking metrics --------------------------------------------------------


def average_precision(relevant_in_rank_order: Sequence[bool]) -> float:
    hits = 0
    total = 0.0
    for r, rel in enumerate(relevant_in_rank_order, 1):
        if rel:
            hits += 1
            total += hits / r
    return total / hits if hits else 0.0


def reciprocal_rank(relevant_in_rank_order: Sequence[bool]) -> float:
    for r, rel in enumerate(relevant_in_rank_order, 1):
        if rel:
            return 1.0 / r
    return 0.0


Ranker = Callable[[LabeledQuestion], Sequence[int]]


def eval_ranking(ranker: Ranker, questions: Sequence[LabeledQuestion]) -> tuple[float, float, int]:
    """Mean AP and mean RR over questions with at least one useful candidate.

    Returns (MAP, MRR, number of questions evaluated).
    """
    aps, rrs = [], []
    for lq in questions:
        if not lq.is_labeled or not lq.useful_mask.any():
            log.warning("skipping unlabeled question %.40r", lq.question)
            continue
        useful = lq.useful_mask
        rel = [bool(useful[j]) for j in ranker(lq)]
        aps.append(average_precision(rel))
        rrs.append(reciprocal_rank(rel))
    if not aps:
        return 0.0, 0.0, 0
    return float(np.mean(aps)), float(np.mean(rrs)), len(aps)


def model_ranker(model: RankerModel) -> Ranker:
    return lambda lq: rank(model, lq)


def baseline_ranker(strategy: str, seed: int = 0) -> Ranker:
    return lambda lq: baseline_rank(strategy, lq, seed)


# -- reader payloads --------------------------------------------------------


@dataclass(frozen=True)
class ReaderPayload:
    context: str
    option: str
    nums: tuple[str, ...]
    knowledge: tuple[str, ...] = ()

    def segments(self) -> dict[str, str]:
        return {"context": self.context, "option": self.option, "nums": " ".join(self.nums)}

    def as_text(self) -> str:
        s = self.segments()
        return f"[CLS] {s['context']} [SEP] {s['option']} [SEP] {s['nums']} [SEP]"


def build_reader_payload(
    passage: str,
    sentences: Sequence[str],
    question: str,
    option: str,
    knowledge: Sequence[str] = (),
) -> ReaderPayload:
    """Mask numbers in P, S, Q and the option; collect them in reading order."""
    nums: list[str] = []
    masked = []
    for text in (passage, *sentences, question):
        m, ns = mask_numbers(text)
        masked.append(m)
        nums.extend(ns)
    opt, ns = mask_numbers(option)
    nums.extend(ns)
    context = " ".join(m for m in masked if m)
    return ReaderPayload(context, opt, tuple(nums), tuple(knowledge))


def task_payloads(
    task: Task,
    sentences: Sequence[str],
    kb: Optional[KnowledgeBase] = None,
    epsilon: int = DEFAULT_EPSILON,
) -> list[ReaderPayload]:
    base = " ".join([task.passage, *sentences, task.question])
    out = []
    for o in task.options:
        know = knowledge_for(base + " " + o, kb, epsilon) if kb else []
        out.append(build_reader_payload(task.passage, sentences, task.question, o, know))
    return out


def scorer_request(task_id: str, payloads: Sequence[ReaderPayload]) -> dict[str, Any]:
    return {
        "task_id": task_id,
        "segments": [p.segments() for p in payloads],
        "knowledge": [list(p.knowledge) for p in payloads],
    }


def parse_scores(reply: Any) -> list[float]:
    if not isinstance(reply, Mapping) or "scores" not in reply:
        raise ScorerError("reply lacks 'scores'")
    scores = reply["scores"]
    if not isinstance(scores, list) or len(scores) != N_OPTIONS:
        raise ScorerError(f"expected {N_OPTIONS} scores, got {scores!r}")
    try:
        out = [float(s) for s in scores]
    except (TypeError, ValueError):
        raise ScorerError(f"non-numeric scores {scores!r}") from None
    if not all(np.isfinite(out)):
        raise ScorerError("non-finite score")
    return out


# -- answerers --------------------------------------------------------------


def argmax_stable(scores: Sequence[float]) -> int:
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best]:
            best = i
    return best


def answer_with_baseline(
    task: Task,
    sentences: Sequence[str],
    kb: Optional[KnowledgeBase] = None,
    epsilon: int = DEFAULT_EPSILON,
) -> int:
    """Option whose tokens overlap most with passage, sentences and knowledge."""
    base = " ".join([task.passage, *sentences])
    scores = []
    for o in task.options:
        evidence = set(tokenize(base))
        if kb:
            evidence |= set(tokenize(" ".join(knowledge_for(base + " " + task.question + " " + o, kb, epsilon))))
        toks = tokenize(o)
        scores.append(sum(t in evidence for t in toks) / len(toks) if toks else 0.0)
    return argmax_stable(scores)


def answer_random(task: Task, rng: np.random.Generator) -> int:
    return int(rng.integers(N_OPTIONS))


class ExternalScorer:
    """Client for an out-of-process option scorer.

    ``endpoint`` is either ``tcp://host:port`` or a command line that is
    spawned once and spoken to over stdin/stdout. Each request is one JSON
    line; each reply is one JSON line ``{"scores": [s0, s1, s2, s3]}``.
    """

    def __init__(self, endpoint: str, timeout: float = DEFAULT_TIMEOUT):
        self.endpoint = endpoint
        self.timeout = timeout
        self._proc: Optional[subprocess.Popen] = None
        self._lock = threading.Lock()

    @property
    def is_tcp(self) -> bool:
        return self.endpoint.startswith("tcp://")

    def score(self, request: Mapping[str, Any]) -> list[float]:
        line = json.dumps(request, ensure_ascii=False, sort_keys=True) + "\n"
        raw = self._call_tcp(line) if self.is_tcp else self._call_proc(line)
        try:
            reply = json.loads(raw)
        except json.JSONDecodeError:
            raise ScorerError(f"malformed reply {raw[:80]!r}") from None
        return parse_scores(reply)

    def _call_tcp(self, line: str) -> str:
        host, _, port = self.endpoint[len("tcp://") :].rpartition(":")
        try:
            with socket.create_connection((host, int(port)), timeout=self.timeout) as sock:
                sock.sendall(line.encode("utf-8"))
                buf = b""
                while not buf.endswith(b"\n"):
                    chunk = sock.recv(65536)
                    if not chunk:
                        break
                    buf += chunk
        except (OSError, ValueError) as e:
            raise ScorerError(f"scorer at {self.endpoint} failed: {e}") from None
        return buf.decode("utf-8")

    def _call_proc(self, line: str) -> str:
        with self._lock:
            if self._proc is None or self._proc.poll() is not None:
                try:
                    self._proc = subprocess.Popen(
                        shlex.split(self.endpoint),
                        stdin=subprocess.PIPE,
                        stdout=subprocess.PIPE,
                        text=True,
                        encoding="utf-8",
                    )
                except OSError as e:
                    raise ScorerError(f"cannot start scorer {self.endpoint!r}: {e}") from None
            proc = self._proc
            assert proc.stdin and proc.stdout
            try:
                proc.stdin.write(line)
                proc.stdin.flush()
            except OSError as e:
                self._kill()
                raise ScorerError(f"scorer pipe closed: {e}") from None
            sel = selectors.DefaultSelector()
            sel.register(proc.stdout, selectors.EVENT_READ)
            ready = sel.select(self.timeout)
            sel.close()
            if not ready:
                self._kill()
                raise ScorerError(f"scorer timed out after {self.timeout}s")
            reply = proc.stdout.readline()
            if not reply:
                self._kill()
                raise ScorerError("scorer exited without replying")
            return reply

    def _kill(self) -> None:
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
            self._proc = None

    def close(self) -> None:
        with self._lock:
            if self._proc is not None:
                if self._proc.stdin:
                    self._proc.stdin.close()
                try:
                    self._proc.wait(timeout=2)
                except subprocess.TimeoutExpired:
                    self._proc.kill()
                    self._proc.wait()
                self._proc = None

    def __enter__(self) -> "ExternalScorer":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def answer_with_external(
    task: Task, payloads: Sequence[ReaderPayload], scorer: ExternalScorer
) -> Optional[int]:
    """Argmax of the external scores; None when the scorer fails."""
    try:
        scores = scorer.score(scorer_request(task.id, payloads))
    except ScorerError as e:
        log.warning("task %s unanswered: %s", task.id, e)
        return None
    return argmax_stable(scores)


# -- sentence selection and QA ---------------------------------------------

SELECTORS = ("ttgen", "lexical", "random", "length", "linearization", "templation", "none")
TEMPLATION_BUDGET = 512


def select_sentences(
    task: Task,
    selector: str,
    k: int,
    model: Optional[RankerModel] = None,
    ts: Optional[TemplateSet] = None,
    kb: Optional[KnowledgeBase] = None,
    epsilon: int = DEFAULT_EPSILON,
    seed: int = 0,
) -> list[str]:
    if selector == "none" or k == 0:
        return []
    if selector == "linearization":
        return [linearize(t) for t in task.tables]
    lq = labeled_question(task, ts, kb, epsilon)
    if lq is None:
        return []
    if selector == "templation":
        text = templation_paragraph(lq.candidates, TEMPLATION_BUDGET)
        return [text] if text else []
    if selector == "ttgen":
        if model is None:
            raise ValueError("the ttgen selector needs a trained model")
        order = rank(model, lq)
    else:
        order = baseline_rank(selector, lq, seed)
    return [lq.candidates[j].sentence for j in order[:k]]


@dataclass
class QAResult:
    predictions: dict[str, Optional[int]]
    accuracy: float
    unanswered: int


def run_qa(
    tasks: Sequence[Task],
    selections: Mapping[str, Sequence[str]],
    answerer: str = "baseline",
    kb: Optional[KnowledgeBase] = None,
    epsilon: int = DEFAULT_EPSILON,
    scorer: Optional[ExternalScorer] = None,
    seed: int = 0,
    max_workers: int = 4,
) -> QAResult:
    """Answer every task; unanswered tasks count as wrong."""
    if answerer == "random":
        rng = np.random.default_rng(seed)
        preds: dict[str, Optional[int]] = {t.id: answer_random(t, rng) for t in tasks}
    elif answerer == "baseline":
        preds = {t.id: answer_with_baseline(t, selections[t.id], kb, epsilon) for t in tasks}
    elif answerer == "external":
        if scorer is None:
            raise ValueError("external answerer needs a scorer endpoint")

        def one(t: Task) -> Optional[int]:
            return answer_with_external(t, task_payloads(t, selections[t.id], kb, epsilon), scorer)

        with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
            results = list(pool.map(one, tasks))
        preds = {t.id: r for t, r in zip(tasks, results)}
    else:
        raise ValueError(f"unknown answerer {answerer!r}")
    correct = sum(preds[t.id] == t.gold_answer for t in tasks)
    unanswered = sum(p is None for p in preds.values())
    return QAResult(preds, correct / len(tasks) if tasks else 0.0, unanswered)


# -- reports ----------------------------------------------------------------


@dataclass
class FoldReport:
    fold: int
    n_train: int
    n_dev: int
    n_test: int
    map: float
    mrr: float
    dev_map: Optional[float] = None
    accuracy: Optional[float] = None
    unanswered: int = 0
    k_sweep: dict[int, float] = field(default_factory=dict)


@dataclass
class MetricsReport:
    map: float
    mrr: float
    accuracy: Optional[float] = None
    unanswered: int = 0
    folds: list[FoldReport] = field(default_factory=list)
    k_sweep: dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for v in (self.map, self.mrr, self.accuracy):
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"metric {v} outside [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        def fold_dict(f: FoldReport) -> dict[str, Any]:
            d = dict(f.__dict__)
            d["k_sweep"] = {str(k): v for k, v in f.k_sweep.items()}
            return d

        return {
            "MAP": self.map,
            "MRR": self.mrr,
            "accuracy": self.accuracy,
            "unanswered": self.unanswered,
            "folds": [fold_dict(f) for f in self.folds],
            "k_sweep": {str(k): v for k, v in self.k_sweep.items()},
        }

    def format_table(self) -> str:
        lines = ["fold  n_test  MAP     MRR     accuracy"]
        for f in self.folds:
            acc = "-" if f.accuracy is None else f"{f.accuracy:.3f}"
            lines.append(f"{f.fold:<4}  {f.n_test:<6}  {f.map:.3f}   {f.mrr:.3f}   {acc}")
        acc = "-" if self.accuracy is None else f"{self.accuracy:.3f}"
        lines.append(f"mean  {'':6}  {self.map:.3f}   {self.mrr:.3f}   {acc}")
        if self.k_sweep:
            ks = sorted(self.k_sweep)
            lines.append("")
            lines.append("k         " + "  ".join(f"k={k:<4}" for k in ks))
            lines.append("accuracy  " + "  ".join(f"{self.k_sweep[k]:.3f}" for k in ks))
        return "\n".join(lines)


@dataclass
class EvalSettings:
    k: int = DEFAULT_K
    epsilon: int = DEFAULT_EPSILON
    folds: int = 5
    seed: int = 0
    selector: str = "ttgen"
    answerer: Optional[str] = "baseline"
    k_sweep: Sequence[int] = ()
    train: TrainConfig = field(default_factory=TrainConfig)
    max_workers: int = 4


def _questions(tasks: Sequence[Task], ts, kb, epsilon) -> dict[str, LabeledQuestion]:
    out = {}
    for t in tasks:
        lq = labeled_question(t, ts, kb, epsilon)
        if lq is not None:
            out[t.id] = lq
    return out


def _ranker_for(selector: str, model: Optional[RankerModel], seed: int) -> Ranker:
    if selector == "ttgen":
        assert model is not None
        return model_ranker(model)
    if selector in ("lexical", "random", "length"):
        return baseline_ranker(selector, seed)
    # paragraph baselines have no sentence ranking; keep generation order
    return lambda lq: list(range(len(lq.candidates)))


def evaluate(
    tasks: Sequence[Task],
    settings: EvalSettings,
    model: Optional[RankerModel] = None,
    ts: Optional[TemplateSet] = None,
    kb: Optional[KnowledgeBase] = None,
    scorer: Optional[ExternalScorer] = None,
) -> MetricsReport:
    """Evaluate ranking and QA.

    With a ``model`` (or a non-learned selector and ``folds`` < 2) the whole
    corpus is one test set. Otherwise the ttgen selector is trained and
    tested per scenario-grouped fold and results are averaged over folds.
    """
    questions = _questions(tasks, ts, kb, settings.epsilon)
    by_id = {t.id: t for t in tasks}
    cv = settings.selector == "ttgen" and model is None
    if cv:
        splits = kfold_split(tasks, settings.folds, settings.seed)
    else:
        ids = tuple(t.id for t in tasks)
        splits = [Fold(0, (), (), ids)]

    fold_reports = []
    for fold in splits:
        fold_model = model
        dev_map = None
        if cv:
            train_q = [questions[i] for i in fold.train if i in questions]
            fold_model = train(train_q, settings.train)
            if fold.dev:
                dev_map = eval_ranking(model_ranker(fold_model), [questions[i] for i in fold.dev if i in questions])[0]
        ranker = _ranker_for(settings.selector, fold_model, settings.seed)
        test_q = [questions[i] for i in fold.test if i in questions]
        m, r, _ = eval_ranking(ranker, test_q)
        report = FoldReport(fold.index, len(fold.train), len(fold.dev), len(fold.test), m, r, dev_map)
        test_tasks = [by_id[i] for i in fold.test]
        if settings.answerer:
            ks = sorted(set(settings.k_sweep) | {settings.k})
            for k in ks:
                sel = {
                    t.id: select_sentences(t, settings.selector, k, fold_model, ts, kb, settings.epsilon, settings.seed)
                    for t in test_tasks
                }
                qa = run_qa(
                    test_tasks, sel, settings.answerer, kb, settings.epsilon, scorer,
                    settings.seed + fold.index, settings.max_workers,
                )
                if k in settings.k_sweep:
                    report.k_sweep[k] = qa.accuracy
                if k == settings.k:
                    report.accuracy = qa.accuracy
                    report.unanswered = qa.unanswered
        fold_reports.append(report)

    def mean(xs: list[float]) -> float:
        return float(np.mean(xs)) if xs else 0.0

    acc = None
    if settings.answerer:
        acc = mean([f.accuracy for f in fold_reports if f.accuracy is not None])
    sweep = {k: mean([f.k_sweep[k] for f in fold_reports]) for k in sorted(settings.k_sweep)}
    return MetricsReport(
        mean([f.map for f in fold_reports]),
        mean([f.mrr for f in fold_reports]),
        acc,
        sum(f.unanswered for f in fold_reports),
        fold_reports,
        sweep,
    )
