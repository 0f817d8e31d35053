"""Sentence-level and template-level rankers and their combination.

Both rankers are linear scorers over explicit features. The sentence
ranker normalizes its logits with a softmax over the candidates of one
question and is trained on listwise negative log-likelihood; the template
ranker emits six independent sigmoid probabilities from passage and
question features and is trained on binary cross-entropy. A candidate's
final usefulness is the product of the two.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from ttgen.knowledge import string_hash, tokenize
from ttgen.realization import Candidate
from ttgen.synthesis import mentions_label

log = logging.getLogger(__name__)

N_TEMPLATES = 6
NUM_TOKEN = "[NUM]"
_NUM_RE = re.compile(r"\d+(?:\.\d+)?")

_STOPWORDS = frozenset(
    "a an and at between by for from in is of on the then to was were which what".split()
)

SENTENCE_FEATURES: tuple[str, ...] = (
    "overlap_question",
    "overlap_passage",
    "overlap_knowledge",
    "shared_numbers",
    "series_in_question",
    "interval_in_question",
    *(f"template_{t}" for t in range(7)),
    "length",
    "n_candidates",
)
CONTEXT_BUCKETS = 512
CONTEXT_FEATURES: tuple[str, ...] = tuple(
    f"{part}_bow_{i}" for part in ("question", "passage") for i in range(CONTEXT_BUCKETS)
)
SCHEMA_HASH = hashlib.sha256(
    json.dumps(
        {"sentence": SENTENCE_FEATURES, "context": CONTEXT_FEATURES, "tokenizer": "latin-num-cjk-v1", "context_encoding": "hashed-presence"}
    ).encode()
).hexdigest()[:16]
MODEL_FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class SchemaMismatch(ValueError):
    pass


def mask_numbers(text: str) -> tuple[str, list[str]]:
    """Replace each maximal number with ``[NUM]``; return the numbers in order."""
    numbers = _NUM_RE.findall(text)
    return _NUM_RE.sub(NUM_TOKEN, text), numbers


def unmask_numbers(masked: str, numbers: Sequence[str]) -> str:
    parts = masked.split(NUM_TOKEN)
    if len(parts) != len(numbers) + 1:
        raise ValueError("placeholder count does not match number count")
    out = [parts[0]]
    for num, rest in zip(numbers, parts[1:]):
        out += [num, rest]
    return "".join(out)


def content_tokens(text: str) -> list[str]:
    return [t for t in tokenize(text) if t not in _STOPWORDS]


def overlap(sentence: str, other: str) -> float:
    """Fraction of the sentence's content tokens that also occur in ``other``."""
    toks = set(content_tokens(sentence))
    if not toks:
        return 0.0
    return len(toks & set(tokenize(other))) / len(toks)


def sentence_features(
    cand: Candidate, passage: str, question: str, knowledge: str, n_candidates: int
) -> np.ndarray:
    f = cand.fact
    _, nums = mask_numbers(cand.sentence)
    ctx_nums = set(mask_numbers(passage + " " + question)[1])
    series_hit = mentions_label(f.series_label, question) or (
        f.second_series_label is not None and mentions_label(f.second_series_label, question)
    )
    labels = {f.start_label, f.end_label} | ({f.point_label} if f.point_label else set())
    interval_hit = any(mentions_label(lab, question) for lab in labels)
    onehot = [0.0] * 7
    onehot[cand.template_index] = 1.0
    return np.array(
        [
            overlap(cand.sentence, question),
            overlap(cand.sentence, passage),
            overlap(cand.sentence, knowledge),
            sum(n in ctx_nums for n in nums) / max(1, len(nums)),
            float(series_hit),
            float(interval_hit),
            *onehot,
            len(cand.sentence) / 100.0,
            n_candidates / 100.0,
        ]
    )


def _hashed_presence(text: str) -> np.ndarray:
    v = np.zeros(CONTEXT_BUCKETS)
    for tok in content_tokens(text):
        v[string_hash(tok) % CONTEXT_BUCKETS] = 1.0
    return v


def context_features(passage: str, question: str) -> np.ndarray:
    return np.concatenate([_hashed_presence(question), _hashed_presence(passage)])


def derive_template_labels(candidates: Sequence[Candidate]) -> tuple[bool, ...]:
    """Template t is useful iff some candidate it generated is labeled useful."""
    labels = [False] * N_TEMPLATES
    for c in candidates:
        if c.usefulness_label and c.template_index >= 1:
            labels[c.template_index - 1] = True
    return tuple(labels)


@dataclass
class LabeledQuestion:
    passage: str
    question: str
    candidates: list[Candidate]
    knowledge: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ValueError("a question needs at least one candidate")

    @property
    def labels(self) -> list[Optional[bool]]:
        return [c.usefulness_label for c in self.candidates]

    @property
    def is_labeled(self) -> bool:
        return any(lab is not None for lab in self.labels)

    @property
    def useful_mask(self) -> np.ndarray:
        return np.array([bool(lab) for lab in self.labels])

    @property
    def template_labels(self) -> tuple[bool, ...]:
        return derive_template_labels(self.candidates)

    @cached_property
    def sentence_matrix(self) -> np.ndarray:
        know = " ".join(self.knowledge)
        n = len(self.candidates)
        return np.vstack(
            [sentence_features(c, self.passage, self.question, know, n) for c in self.candidates]
        )

    @cached_property
    def context_vector(self) -> np.ndarray:
        return context_features(self.passage, self.question)


@dataclass
class TrainConfig:
    learning_rate: float = 1.0
    epochs: int = 1000
    seed: int = 0
    batch_size: Optional[int] = None
    l2: float = 0.0


@dataclass
class RankerModel:
    sentence_weights: np.ndarray
    sentence_bias: float
    template_weights: np.ndarray
    template_bias: np.ndarray
    seed: int = 0
    epochs: int = 0
    learning_rate: float = 0.0
    sentence_loss_trace: list[float] = field(default_factory=list)
    template_loss_trace: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.sentence_weights = np.asarray(self.sentence_weights, dtype=float)
        self.template_weights = np.asarray(self.template_weights, dtype=float)
        self.template_bias = np.asarray(self.template_bias, dtype=float)
        if self.sentence_weights.shape != (len(SENTENCE_FEATURES),):
            raise SchemaMismatch("sentence weight dimension does not match the feature schema")
        if self.template_weights.shape != (len(CONTEXT_FEATURES), N_TEMPLATES):
            raise SchemaMismatch("template weight shape does not match the feature schema")
        if self.template_bias.shape != (N_TEMPLATES,):
            raise SchemaMismatch("template bias must have one entry per template")
        for arr in (self.sentence_weights, self.template_weights, self.template_bias):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite model parameter")

    @classmethod
    def zeros(cls) -> "RankerModel":
        return cls(
            np.zeros(len(SENTENCE_FEATURES)),
            0.0,
            np.zeros((len(CONTEXT_FEATURES), N_TEMPLATES)),
            np.zeros(N_TEMPLATES),
        )

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "schema_hash": SCHEMA_HASH,
            "sentence_features": list(SENTENCE_FEATURES),
            "sentence_weights": self.sentence_weights.tolist(),
            "sentence_bias": float(self.sentence_bias),
            "template_weights": self.template_weights.tolist(),
            "template_bias": self.template_bias.tolist(),
            "training": {
                "seed": self.seed,
                "epochs": self.epochs,
                "learning_rate": self.learning_rate,
                "sentence_loss_trace": list(self.sentence_loss_trace),
                "template_loss_trace": list(self.template_loss_trace),
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RankerModel":
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise SchemaMismatch(f"unsupported model format {d.get('format_version')!r}")
        if d.get("schema_hash") != SCHEMA_HASH:
            raise SchemaMismatch("model was trained with a different feature schema")
        meta = d.get("training", {})
        return cls(
            np.array(d["sentence_weights"]),
            float(d["sentence_bias"]),
            np.array(d["template_weights"]),
            np.array(d["template_bias"]),
            seed=meta.get("seed", 0),
            epochs=meta.get("epochs", 0),
            learning_rate=meta.get("learning_rate", 0.0),
            sentence_loss_trace=list(meta.get("sentence_loss_trace", [])),
            template_loss_trace=list(meta.get("template_loss_trace", [])),
        )

    @classmethod
    def loads(cls, text: str) -> "RankerModel":
        return cls.from_dict(json.loads(text))


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z))
    return e / e.sum()


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def score_sentences(m: RankerModel, lq: LabeledQuestion) -> np.ndarray:
    return softmax(lq.sentence_matrix @ m.sentence_weights + m.sentence_bias)


def score_templates(m: RankerModel, lq: LabeledQuestion) -> np.ndarray:
    return sigmoid(lq.context_vector @ m.template_weights + m.template_bias)


def template_probability(psi: np.ndarray, template_index: int) -> float:
    # non-numeric sentences have no template scorer; they get the mean template score
    if template_index == 0:
        return float(np.mean(psi))
    return float(psi[template_index - 1])


def combined_scores(phi: np.ndarray, psi: np.ndarray, candidates: Sequence[Candidate]) -> np.ndarray:
    return np.array(
        [p * template_probability(psi, c.template_index) for p, c in zip(phi, candidates)]
    )


def combine_and_select(
    phi: np.ndarray, psi: np.ndarray, candidates: Sequence[Candidate], k: int
) -> list[Candidate]:
    """Top-``k`` candidates by phi_j * psi_{tau_j}; ties keep the original order."""
    if k < 1:
        raise ValueError("k must be at least 1")
    scores = combined_scores(phi, psi, candidates)
    order = sorted(range(len(candidates)), key=lambda j: -scores[j])
    return [replace(candidates[j], score=float(scores[j])) for j in order[:k]]


def rank(m: RankerModel, lq: LabeledQuestion) -> list[int]:
    """Full ranking of candidate indices by combined score."""
    scores = combined_scores(score_sentences(m, lq), score_templates(m, lq), lq.candidates)
    return sorted(range(len(scores)), key=lambda j: -scores[j])


def select(m: RankerModel, lq: LabeledQuestion, k: int) -> list[Candidate]:
    return combine_and_select(score_sentences(m, lq), score_templates(m, lq), lq.candidates, k)


# -- losses -----------------------------------------------------------------

SentenceBatch = Sequence[tuple[np.ndarray, np.ndarray]]


@dataclass
class _Stacked:
    """Candidates of many questions stacked row-wise, with segment offsets."""

    X: np.ndarray
    useful: np.ndarray
    starts: np.ndarray
    seg: np.ndarray

    @classmethod
    def build(cls, batch: SentenceBatch) -> "_Stacked":
        sizes = [len(X) for X, _ in batch]
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)
        seg = np.repeat(np.arange(len(batch)), sizes)
        return cls(
            np.vstack([X for X, _ in batch]),
            np.concatenate([np.asarray(u, dtype=bool) for _, u in batch]),
            starts,
            seg,
        )


def _segment_lse(z: np.ndarray, st: _Stacked, mask: Optional[np.ndarray] = None) -> np.ndarray:
    zz = z if mask is None else np.where(mask, z, -np.inf)
    m = np.maximum.reduceat(zz, st.starts)
    e = np.exp(zz - m[st.seg])
    return m + np.log(np.add.reduceat(e, st.starts))


def _nll_stacked(w: np.ndarray, b: float, st: _Stacked) -> tuple[float, np.ndarray]:
    z = st.X @ w + b
    lse_all = _segment_lse(z, st)
    lse_useful = _segment_lse(z, st, st.useful)
    p = np.exp(z - lse_all[st.seg])
    q = np.where(st.useful, np.exp(z - lse_useful[st.seg]), 0.0)
    n = len(st.starts)
    return float(np.sum(lse_all - lse_useful)) / n, st.X.T @ (p - q) / n


def listwise_nll(w: np.ndarray, b: float, batch: SentenceBatch) -> tuple[float, np.ndarray, float]:
    """Mean over questions of -log(sum of softmax mass on useful candidates).

    Returns (loss, dL/dw, dL/db). The bias shifts every logit equally so its
    gradient is identically zero; it is kept for parity with the scorer.
    """
    loss, grad = _nll_stacked(w, b, _Stacked.build(batch))
    return loss, grad, 0.0


def template_bce(
    W: np.ndarray, b: np.ndarray, F: np.ndarray, Y: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean binary cross-entropy over questions and the six template labels."""
    Z = F @ W + b
    loss = float(np.mean(np.logaddexp(0.0, Z) - Y * Z))
    G = (sigmoid(Z) - Y) / Z.size
    return loss, F.T @ G, G.sum(axis=0)


# -- training ---------------------------------------------------------------


def _batches(n: int, cfg: TrainConfig, rng: np.random.Generator) -> list[np.ndarray]:
    if cfg.batch_size is None or cfg.batch_size >= n:
        return [np.arange(n)]
    perm = rng.permutation(n)
    return [perm[i : i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]


def train_sentence_ranker(
    data: Sequence[LabeledQuestion], cfg: TrainConfig, model: Optional[RankerModel] = None
) -> RankerModel:
    batch = []
    for lq in data:
        mask = lq.useful_mask
        if not mask.any():
            log.warning("skipping question without useful candidates: %.40r", lq.question)
            continue
        batch.append((lq.sentence_matrix, mask))
    if not batch:
        raise TrainingError("no training question has a useful candidate")
    model = model or RankerModel.zeros()
    w, b = model.sentence_weights.copy(), float(model.sentence_bias)
    rng = np.random.default_rng(cfg.seed)

    everything = _Stacked.build(batch)

    def full_loss() -> float:
        return _nll_stacked(w, b, everything)[0] + 0.5 * cfg.l2 * float(w @ w)

    trace = [full_loss()]
    for _ in range(cfg.epochs):
        for idx in _batches(len(batch), cfg, rng):
            st = everything if len(idx) == len(batch) else _Stacked.build([batch[i] for i in idx])
            _, gw = _nll_stacked(w, b, st)
            w = w - cfg.learning_rate * (gw + cfg.l2 * w)
        trace.append(full_loss())
    return replace(
        model,
        sentence_weights=w,
        sentence_bias=b,
        seed=cfg.seed,
        epochs=cfg.epochs,
        learning_rate=cfg.learning_rate,
        sentence_loss_trace=trace,
    )


def train_template_ranker(
    data: Sequence[LabeledQuestion], cfg: TrainConfig, model: Optional[RankerModel] = None
) -> RankerModel:
    usable = [lq for lq in data if lq.is_labeled]
    if not usable:
        raise TrainingError("no training question carries usefulness labels")
    F = np.vstack([lq.context_vector for lq in usable])
    Y = np.array([lq.template_labels for lq in usable], dtype=float)
    model = model or RankerModel.zeros()
    W, b = model.template_weights.copy(), model.template_bias.copy()
    rng = np.random.default_rng(cfg.seed)

    def full_loss() -> float:
        return template_bce(W, b, F, Y)[0] + 0.5 * cfg.l2 * float(np.sum(W * W))

    trace = [full_loss()]
    for _ in range(cfg.epochs):
        for idx in _batches(len(usable), cfg, rng):
            _, gW, gb = template_bce(W, b, F[idx], Y[idx])
            W = W - cfg.learning_rate * (gW + cfg.l2 * W)
            b = b - cfg.learning_rate * gb
        trace.append(full_loss())
    return replace(
        model,
        template_weights=W,
        template_bias=b,
        seed=cfg.seed,
        epochs=cfg.epochs,
        learning_rate=cfg.learning_rate,
        template_loss_trace=trace,
    )


def train(data: Sequence[LabeledQuestion], cfg: TrainConfig) -> RankerModel:
    model = train_sentence_ranker(data, cfg)
    return train_template_ranker(data, cfg, model)


# -- baselines --------------------------------------------------------------


def baseline_rank(strategy: str, lq: LabeledQuestion, seed: int = 0) -> list[int]:
    """Candidate indices ordered by a non-learned strategy."""
    n = len(lq.candidates)
    if strategy == "random":
        return [int(i) for i in np.random.default_rng(seed).permutation(n)]
    if strategy == "length":
        return sorted(range(n), key=lambda j: len(lq.candidates[j].sentence))
    if strategy == "lexical":
        ctx = set(tokenize(lq.passage + " " + lq.question))
        shared = [len(set(content_tokens(c.sentence)) & ctx) for c in lq.candidates]
        return sorted(range(n), key=lambda j: -shared[j])
    raise ValueError(f"unknown baseline strategy {strategy!r}")
