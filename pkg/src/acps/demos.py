"""Demonstration bank: loading, similarity ranking and intervention-prompt assembly."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backends import EmbeddingBackend
from .core import Query, cosine_similarity
from .errors import DuplicateId, EmbeddingFailure, EmptyBank, LTooLarge, ParseError
from .prompts import demo_block, intervention_prompt, target_block
from .router import Paradigm

DEFAULT_L = 2
_REQUIRED = ("id", "question", "wrong_trace", "correct_trace", "answer")


@dataclass(frozen=True)
class Demonstration:
    id: str
    question: str
    evidence: tuple[str, ...]
    wrong_trace: str
    correct_trace: str
    answer: str
    embedding: np.ndarray | None = None

    def block(self) -> str:
        return demo_block(self.question, self.evidence, self.wrong_trace, self.correct_trace, self.answer)


@dataclass(frozen=True)
class InterventionPrompt:
    text: str
    demo_ids: tuple[str, ...]  # in prompt order: least similar first
    cluster_index: int


class DemoBank:
    """Immutable after construction; embeddings are keyed by correct_trace text."""

    def __init__(self, demos: Sequence[Demonstration]):
        seen = set()
        for d in demos:
            if d.id in seen:
                raise DuplicateId(f"duplicate demonstration id {d.id!r}")
            seen.add(d.id)
        self.demos = tuple(demos)

    def __len__(self) -> int:
        return len(self.demos)

    def __iter__(self):
        return iter(self.demos)


def parse_demo_record(obj: dict, lineno: int | None = None) -> Demonstration:
    for name in _REQUIRED:
        val = obj.get(name)
        if not isinstance(val, str) or not val.strip():
            raise ParseError(f"field {name!r} missing or empty", lineno)
    evidence = obj.get("evidence") or []
    if not isinstance(evidence, list) or not all(isinstance(e, str) and e.strip() for e in evidence):
        raise ParseError("field 'evidence' must be an array of nonempty strings", lineno)
    return Demonstration(
        id=obj["id"],
        question=obj["question"],
        evidence=tuple(evidence),
        wrong_trace=obj["wrong_trace"],
        correct_trace=obj["correct_trace"],
        answer=obj["answer"],
    )


def load_demos(path: str | os.PathLike, embedder: EmbeddingBackend) -> DemoBank:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from exc
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", lineno)
            records.append(parse_demo_record(obj, lineno))
    DemoBank(records)  # id check before paying for embeddings
    if not records:
        return DemoBank([])
    try:
        vectors = embedder.embed([d.correct_trace for d in records])
    except Exception as exc:
        raise EmbeddingFailure(f"embedding demonstrations from {path}: {exc}") from exc
    return DemoBank([_with_embedding(d, v) for d, v in zip(records, vectors)])


def _with_embedding(d: Demonstration, v) -> Demonstration:
    return Demonstration(d.id, d.question, d.evidence, d.wrong_trace, d.correct_trace, d.answer,
                         np.asarray(v, dtype=float))


def rank_demos(bank: DemoBank, trace_embedding: Sequence[float]) -> list[tuple[Demonstration, float]]:
    """Demonstrations by descending cosine similarity to the trace; ties by id."""
    if not len(bank):
        raise EmptyBank("demonstration bank is empty")
    scored = [(d, cosine_similarity(trace_embedding, d.embedding)) for d in bank]
    scored.sort(key=lambda pair: (-pair[1], pair[0].id))
    return scored


def build_intervention_prompt(
    ranked: Sequence[Demonstration | tuple[Demonstration, float]],
    L: int,
    query: Query,
    representative_trace: str,
    paradigm: Paradigm,
    cluster_index: int = 0,
) -> InterventionPrompt:
    """Top-L demonstrations, most similar placed right before the test block."""
    demos = [r[0] if isinstance(r, tuple) else r for r in ranked]
    if L < 1 or L > len(demos):
        raise LTooLarge(f"L={L} but only {len(demos)} demonstrations ranked")
    chosen = list(reversed(demos[:L]))
    target = target_block(query.question, query.external_knowledge, query.choices, representative_trace)
    text = intervention_prompt(paradigm, [d.block() for d in chosen], target)
    return InterventionPrompt(text, tuple(d.id for d in chosen), cluster_index)
