"""Entity/fact-sentence knowledge base with cosine-ranked retrieval."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DEFAULT_EPSILON = 2

_TOKEN_RE = re.compile(r"[A-Za-z]+|\d+(?:\.\d+)?|[㐀-鿿]")


def tokenize(text: str) -> list[str]:
    """Lower-cased latin words, numbers, and single CJK characters."""
    return [t.lower() for t in _TOKEN_RE.findall(text)]


def string_hash(s: str) -> int:
    """Multiplicative string hash (mod 2**32); stable across processes."""
    h = 0
    for ch in s:
        h = (h * 31 + ord(ch)) & 0xFFFFFFFF
    return h


class HashedBagOfWords:
    """Default embedding: token counts hashed into ``dim`` buckets, L2-normalized."""

    def __init__(self, dim: int = 1024):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim

    def __call__(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for tok in tokenize(text):
            v[string_hash(tok) % self.dim] += 1.0
        norm = np.linalg.norm(v)
        return v / norm if norm > 0 else v


EmbeddingFn = Callable[[str], np.ndarray]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def triple_to_pair(entity: str, prop: str, value: str) -> tuple[str, str]:
    if not (entity.strip() and prop.strip() and value.strip()):
        raise ValueError(f"empty component in triple {(entity, prop, value)!r}")
    return entity, f"{prop} {value}"


@dataclass(frozen=True)
class Mention:
    entity: str
    start: int
    end: int


@dataclass(frozen=True)
class KnowledgeBase:
    entries: tuple[tuple[str, str], ...]
    _facts: dict[str, tuple[str, ...]] = field(init=False, repr=False, compare=False)
    _max_len: int = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        facts: dict[str, list[str]] = {}
        for entity, sentence in self.entries:
            if not entity or not sentence:
                raise ValueError(f"empty entity or fact sentence in {(entity, sentence)!r}")
            facts.setdefault(entity, []).append(sentence)
        object.__setattr__(self, "_facts", {e: tuple(fs) for e, fs in facts.items()})
        object.__setattr__(self, "_max_len", max((len(e) for e in facts), default=0))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "KnowledgeBase":
        return cls(tuple((e, f) for e, f in pairs))

    @classmethod
    def empty(cls) -> "KnowledgeBase":
        return cls(())

    @property
    def lexicon(self) -> frozenset[str]:
        return frozenset(self._facts)

    def facts_for(self, entity: str) -> tuple[str, ...]:
        return self._facts.get(entity, ())

    @classmethod
    def parse(cls, text: str) -> "KnowledgeBase":
        """Tab-separated lines: ``entity<TAB>fact`` or ``entity<TAB>property<TAB>value``."""
        pairs = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.rstrip("\n").split("\t")]
            try:
                if len(parts) == 2:
                    if not parts[0] or not parts[1]:
                        raise ValueError("empty entity or fact sentence")
                    pairs.append((parts[0], parts[1]))
                elif len(parts) == 3:
                    pairs.append(triple_to_pair(*parts))
                else:
                    raise ValueError(f"expected 2 or 3 tab-separated fields, got {len(parts)}")
            except ValueError as e:
                raise ValueError(f"line {lineno}: {e}") from None
        return cls.from_pairs(pairs)

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeBase":
        return cls.parse(Path(path).read_text(encoding="utf-8"))


def detect_entities(text: str, kb: KnowledgeBase) -> list[Mention]:
    """Greedy left-to-right longest match against the entity lexicon."""
    mentions = []
    lexicon = kb.lexicon
    i = 0
    while i < len(text):
        hit = None
        for n in range(min(kb._max_len, len(text) - i), 0, -1):
            if text[i : i + n] in lexicon:
                hit = n
                break
        if hit:
            mentions.append(Mention(text[i : i + hit], i, i + hit))
            i += hit
        else:
            i += 1
    return mentions


def retrieve(
    mentions: Sequence[Mention],
    context_text: str,
    kb: KnowledgeBase,
    epsilon: int = DEFAULT_EPSILON,
    embed: Optional[EmbeddingFn] = None,
) -> list[list[str]]:
    """Top-``epsilon`` facts per mention by cosine similarity to the context."""
    if epsilon < 1:
        raise ValueError("epsilon must be at least 1")
    embed = embed or HashedBagOfWords()
    ctx = embed(context_text)
    out = []
    for m in mentions:
        facts = kb.facts_for(m.entity)
        sims = [cosine(embed(f), ctx) for f in facts]
        order = sorted(range(len(facts)), key=lambda i: -sims[i])
        out.append([facts[i] for i in order[:epsilon]])
    return out


def knowledge_for(
    text: str,
    kb: KnowledgeBase,
    epsilon: int = DEFAULT_EPSILON,
    embed: Optional[EmbeddingFn] = None,
) -> list[str]:
    """Retrieved facts for every entity mentioned in ``text``, deduplicated in order."""
    if not kb.entries:
        return []
    seen: dict[str, None] = {}
    for facts in retrieve(detect_entities(text, kb), text, kb, epsilon, embed):
        for f in facts:
            seen.setdefault(f, None)
    return list(seen)
