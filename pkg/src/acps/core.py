"""Shared domain types, answer canonicalization, similarity math and step/token counting."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyAnswer, UnmappableChoice, ZeroVector


class TaskKind(str, Enum):
    NUMERIC = "numeric"
    OPEN = "open"
    MULTIPLE_CHOICE = "multiple_choice"
    YES_NO = "yes_no"
    SUPPORTS_REFUTES = "supports_refutes"


@dataclass(frozen=True)
class Query:
    id: str
    question: str
    external_knowledge: tuple[str, ...] = ()
    choices: Mapping[str, str] | None = None
    task_kind: TaskKind = TaskKind.OPEN

    def __post_init__(self):
        if not self.id:
            raise ValueError("query id must be nonempty")
        object.__setattr__(self, "task_kind", TaskKind(self.task_kind))
        object.__setattr__(self, "external_knowledge", tuple(self.external_knowledge))
        if any(not e.strip() for e in self.external_knowledge):
            raise ValueError("evidence strings must be nonempty")
        if self.task_kind is TaskKind.MULTIPLE_CHOICE and not self.choices:
            raise ValueError("multiple_choice query requires choices")

    @property
    def has_external_knowledge(self) -> bool:
        return bool(self.external_knowledge)


@dataclass(frozen=True)
class SketchTrace:
    text: str
    think_block: str | None
    boxed_answer: str | None
    temperature: float
    schedule_index: int
    completion_tokens: int
    step_count: int
    tokens_reported: bool = True

    @classmethod
    def parse(
        cls,
        text: str,
        temperature: float,
        schedule_index: int,
        completion_tokens: int | None = None,
    ) -> "SketchTrace":
        if not 0.0 <= temperature <= 2.0:
            raise ValueError(f"temperature {temperature} outside [0, 2]")
        think = extract_think_block(text)
        tokens, reported = resolve_token_count(completion_tokens, text)
        return cls(
            text=text,
            think_block=think,
            boxed_answer=extract_boxed(text),
            temperature=temperature,
            schedule_index=schedule_index,
            completion_tokens=tokens,
            step_count=count_reasoning_steps(think),
            tokens_reported=reported,
        )


@dataclass(frozen=True, order=True)
class CanonicalAnswer:
    value: str
    kind: TaskKind = field(default=TaskKind.OPEN, compare=False)

    def __str__(self) -> str:
        return self.value


# --- answer extraction -----------------------------------------------------

_BOX = "\\boxed{"


def _match_brace(text: str, open_idx: int) -> int | None:
    """Index of the brace closing the one at ``open_idx``, or None."""
    depth = 0
    for i in range(open_idx, len(text)):
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return i
    return None


def extract_boxed(text: str) -> str | None:
    """Return the content of the last top-level ``\\boxed{...}`` in ``text``.

    Markers are matched with brace balancing; a marker whose braces never
    close is skipped. Nested markers belong to their enclosing box.
    """
    found = None
    pos = 0
    while True:
        start = text.find(_BOX, pos)
        if start < 0:
            return found
        brace = start + len(_BOX) - 1
        end = _match_brace(text, brace)
        if end is None:
            pos = start + 1
            continue
        found = text[brace + 1 : end]
        pos = end + 1


_THINK_RE = re.compile(r"<think>(.*?)(?:</think>|$)", re.DOTALL)
_IMPROVED_RE = re.compile(
    r"(?:<improved_rs>|\[improved_rs\])(.*?)(?:</improved_rs>|\\boxed\{|$)", re.DOTALL
)


def extract_think_block(text: str) -> str | None:
    m = _THINK_RE.search(text)
    return m.group(1).strip() if m else None


def extract_improved_block(text: str) -> str | None:
    m = _IMPROVED_RE.search(text)
    return m.group(1).strip() if m else None


# --- canonicalization -------------------------------------------------------

# Fixed synonym tables; keys are post-normalization strings.
YES_NO_SYNONYMS: dict[str, str] = {
    "yes": "yes",
    "y": "yes",
    "true": "yes",
    "correct": "yes",
    "right": "yes",
    "no": "no",
    "n": "no",
    "false": "no",
    "incorrect": "no",
    "wrong": "no",
}

SUPPORTS_REFUTES_SYNONYMS: dict[str, str] = {
    "supports": "supports",
    "support": "supports",
    "supported": "supports",
    "true": "supports",
    "yes": "supports",
    "refutes": "refutes",
    "refute": "refutes",
    "refuted": "refutes",
    "false": "refutes",
    "no": "refutes",
    "not enough info": "not enough info",
    "not enough information": "not enough info",
    "nei": "not enough info",
}

_TERMINAL_PUNCT = ".,;:!?"
_CURRENCY = "$€£¥₹"
_THOUSANDS_RE = re.compile(r"(?<=\d),(?=\d{3}(?:\D|$))")
_ZERO_FRACTION_RE = re.compile(r"^(-?\d+)\.0+$")
_LETTER_RE = re.compile(r"^\(?([a-z])\)?$")


def _normalize_text(raw: str) -> str:
    s = " ".join(raw.lower().split())
    return s.rstrip(_TERMINAL_PUNCT).strip()


def _normalize_numeric(s: str) -> str:
    s = _THOUSANDS_RE.sub("", s)
    s = "".join(ch for ch in s if ch not in _CURRENCY)
    s = " ".join(s.split())
    return _ZERO_FRACTION_RE.sub(r"\1", s)


def _fixed_point(fn, s: str) -> str:
    for _ in range(32):
        nxt = fn(s)
        if nxt == s:
            return s
        s = nxt
    return s


def canonicalize_answer(
    raw: str,
    kind: TaskKind | str,
    choices: Mapping[str, str] | None = None,
) -> CanonicalAnswer:
    """Map a raw answer string onto its canonical form for ``kind``.

    Raises EmptyAnswer when nothing survives normalization and
    UnmappableChoice when a multiple-choice answer matches neither a
    letter nor an option text.
    """
    kind = TaskKind(kind)
    if kind is TaskKind.NUMERIC:
        step = lambda s: _normalize_numeric(_normalize_text(s))  # noqa: E731
    else:
        step = _normalize_text
    value = _fixed_point(step, raw)
    if not value:
        raise EmptyAnswer(f"answer {raw!r} is empty after normalization")

    if kind is TaskKind.MULTIPLE_CHOICE:
        value = _map_choice(value, choices or {})
    elif kind is TaskKind.YES_NO:
        value = YES_NO_SYNONYMS.get(value, value)
    elif kind is TaskKind.SUPPORTS_REFUTES:
        value = SUPPORTS_REFUTES_SYNONYMS.get(value, value)
    return CanonicalAnswer(value, kind)


def _map_choice(value: str, choices: Mapping[str, str]) -> str:
    letters = {k.strip().lower(): k.strip().upper() for k in choices}
    m = _LETTER_RE.match(value)
    if m and m.group(1) in letters:
        return letters[m.group(1)]
    for key, text in choices.items():
        if _fixed_point(_normalize_text, text) == value:
            return key.strip().upper()
    raise UnmappableChoice(f"{value!r} matches no option in {sorted(letters.values())}")


# --- similarity --------------------------------------------------------------


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    va = np.asarray(a, dtype=float)
    vb = np.asarray(b, dtype=float)
    if va.shape != vb.shape:
        raise DimensionMismatch(f"{va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity undefined for a zero vector")
    sim = float(np.dot(va, vb)) / (na * nb)
    return max(-1.0, min(1.0, sim))


def check_embeddings(vectors: Sequence[Sequence[float]]) -> np.ndarray:
    """Stack vectors into a 2-D array, enforcing uniform dimension and finiteness."""
    dims = {len(v) for v in vectors}
    if len(dims) > 1:
        raise DimensionMismatch(f"mixed embedding dimensions {sorted(dims)}")
    arr = np.asarray(vectors, dtype=float)
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise DimensionMismatch("embeddings must be nonempty vectors")
    if not np.all(np.isfinite(arr)):
        raise ValueError("embedding has non-finite components")
    return arr


# --- efficiency counting -----------------------------------------------------

ARROW = "→"


def count_reasoning_steps(think_block: str | None) -> int:
    """Each nonempty line counts its arrow hops, with a floor of one step."""
    if not think_block:
        return 0
    return sum(max(1, line.count(ARROW)) for line in think_block.splitlines() if line.strip())


def approx_token_count(text: str) -> int:
    return len(text.split())


def resolve_token_count(reported: int | None, text: str) -> tuple[int, bool]:
    """Prefer backend usage; fall back to whitespace chunks. Second item: was usage reported."""
    if reported is not None:
        return int(reported), True
    return approx_token_count(text), False
