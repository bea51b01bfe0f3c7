"""Dataset ingestion, QA metrics, robustness perturbations, efficiency accounting and reports."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import random
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import CanonicalAnswer, Query, TaskKind, canonicalize_answer
from .errors import (
    AggregateMismatch,
    DisjointnessViolation,
    EmptyAnswer,
    EmptyLog,
    EmptyPool,
    EmptyResults,
    NoEvidence,
    ParseError,
    ReportIOError,
    SchemaViolation,
    UnmappableChoice,
)

log = logging.getLogger(__name__)

AGGREGATE_TOL = 1e-12


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    question: str
    gold_answer: str
    task_kind: TaskKind = TaskKind.OPEN
    evidence: tuple[str, ...] = ()
    choices: Mapping[str, str] | None = None

    def to_query(self) -> Query:
        return Query(self.id, self.question, self.evidence, self.choices, self.task_kind)

    def to_json(self) -> dict:
        obj = {"id": self.id, "question": self.question}
        if self.evidence:
            obj["evidence"] = list(self.evidence)
        if self.choices:
            obj["choices"] = dict(self.choices)
        obj["answer"] = self.gold_answer
        obj["task_kind"] = self.task_kind.value
        return obj


def _nonempty_str(obj: dict, name: str, lineno: int | None) -> str:
    val = obj.get(name)
    if not isinstance(val, str) or not val.strip():
        raise SchemaViolation(name, "required nonempty string", lineno)
    return val


def parse_record(obj: dict, lineno: int | None = None) -> DatasetRecord:
    rid = obj.get("id")
    if isinstance(rid, int):
        rid = str(rid)
    if not isinstance(rid, str) or not rid:
        raise SchemaViolation("id", "required nonempty string", lineno)
    question = _nonempty_str(obj, "question", lineno)
    answer = obj.get("answer")
    if isinstance(answer, (int, float)) and not isinstance(answer, bool):
        answer = str(answer)
    if not isinstance(answer, str) or not answer.strip():
        raise SchemaViolation("answer", "required nonempty string", lineno)
    try:
        kind = TaskKind(obj.get("task_kind", "open"))
    except ValueError:
        raise SchemaViolation("task_kind", f"unknown kind {obj.get('task_kind')!r}", lineno) from None
    evidence = obj.get("evidence") or []
    if not isinstance(evidence, list) or not all(isinstance(e, str) and e.strip() for e in evidence):
        raise SchemaViolation("evidence", "must be an array of nonempty strings", lineno)
    choices = obj.get("choices")
    if choices is not None and (
        not isinstance(choices, dict) or not all(isinstance(v, str) for v in choices.values())
    ):
        raise SchemaViolation("choices", "must be an object mapping letters to text", lineno)
    if (kind is TaskKind.MULTIPLE_CHOICE) != bool(choices):
        raise SchemaViolation("choices", "required exactly when task_kind is multiple_choice", lineno)
    return DatasetRecord(rid, question, answer, kind, tuple(evidence), choices or None)


def load_dataset(path: str | os.PathLike) -> list[DatasetRecord]:
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
            records.append(parse_record(obj, lineno))
    if not records:
        log.warning("dataset %s is empty", path)
    return records


def write_dataset(records: Iterable[DatasetRecord], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False) + "\n")


# --- metrics -------------------------------------------------------------------


def exact_match(
    pred: CanonicalAnswer | str | None,
    gold: str,
    kind: TaskKind | str = TaskKind.OPEN,
    choices: Mapping[str, str] | None = None,
) -> int:
    if pred is None:
        return 0
    value = pred.value if isinstance(pred, CanonicalAnswer) else str(pred)
    try:
        return int(canonicalize_answer(gold, kind, choices).value == value)
    except (EmptyAnswer, UnmappableChoice):
        return 0


def token_f1(pred: str | CanonicalAnswer | None, gold: str | CanonicalAnswer) -> float:
    """Multiset token overlap F1 over whitespace tokens of canonical strings."""
    if pred is None:
        return 0.0
    p_tokens = str(pred).split()
    g_tokens = str(gold).split()
    overlap = sum((Counter(p_tokens) & Counter(g_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(p_tokens)
    recall = overlap / len(g_tokens)
    return 2 * precision * recall / (precision + recall)


def accuracy(results: Sequence[int | float]) -> float:
    if not results:
        raise EmptyResults("accuracy over zero results")
    return math.fsum(results) / len(results)


def score_prediction(pred: str | None, record: DatasetRecord) -> tuple[int, float]:
    """(EM, F1) of a canonical prediction against the record's gold answer."""
    try:
        gold = canonicalize_answer(record.gold_answer, record.task_kind, record.choices).value
    except (EmptyAnswer, UnmappableChoice):
        return 0, 0.0
    if pred is None:
        return 0, 0.0
    return int(pred == gold), token_f1(pred, gold)


# --- perturbations --------------------------------------------------------------


def perturb_inject(record: DatasetRecord, distractor_pool: Sequence[str], seed: int) -> DatasetRecord:
    """Replace one seeded evidence item with one seeded distractor."""
    if not record.evidence:
        raise NoEvidence(f"record {record.id} has no evidence to replace")
    if not distractor_pool:
        raise EmptyPool("distractor pool is empty")
    overlap = set(distractor_pool) & set(record.evidence)
    if overlap:
        raise DisjointnessViolation(f"pool shares {len(overlap)} item(s) with record {record.id}'s evidence")
    rng = random.Random(seed)
    idx = rng.randrange(len(record.evidence))
    evidence = list(record.evidence)
    evidence[idx] = distractor_pool[rng.randrange(len(distractor_pool))]
    return replace(record, evidence=tuple(evidence))


def perturb_shuffle(record: DatasetRecord, seed: int) -> DatasetRecord:
    if not record.evidence:
        raise NoEvidence(f"record {record.id} has no evidence to shuffle")
    evidence = list(record.evidence)
    random.Random(seed).shuffle(evidence)
    return replace(record, evidence=tuple(evidence))


def load_pool(path: str | os.PathLike) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


# --- efficiency -----------------------------------------------------------------


@dataclass(frozen=True)
class CompletionUsage:
    phase: str  # "trace" | "answer"
    completion_tokens: int
    tokens_reported: bool
    steps: int


def _counting_mode(entries: Sequence[CompletionUsage]) -> str:
    reported = {e.tokens_reported for e in entries}
    if reported == {True}:
        return "reported"
    if reported == {False}:
        return "fallback_whitespace"
    return "mixed"


def _summary(entries: Sequence[CompletionUsage]) -> dict:
    return {
        "completions": len(entries),
        "avg_tokens": math.fsum(e.completion_tokens for e in entries) / len(entries),
        "avg_steps": math.fsum(e.steps for e in entries) / len(entries),
        "token_counting": _counting_mode(entries),
    }


def efficiency_report(entries: Sequence[CompletionUsage]) -> dict:
    """Average tokens and steps per completion, overall and per phase."""
    if not entries:
        raise EmptyLog("no completions to account for")
    out = _summary(entries)
    phases = sorted({e.phase for e in entries})
    out["phases"] = {p: _summary([e for e in entries if e.phase == p]) for p in phases}
    return out


# --- reports --------------------------------------------------------------------

CSV_FIELDS = ("id", "pred", "gold", "em", "f1", "tokens", "steps")


@dataclass
class RecordResult:
    id: str
    pred: str | None
    gold: str
    em: int
    f1: float
    tokens: int
    steps: float
    majority_pred: str | None = None
    majority_em: int = 0
    tokens_reported: bool = True
    dropped_traces: int = 0
    dropped_samples: int = 0
    paradigm: str | None = None
    adjustment: str | None = None
    error: str | None = None


def compute_aggregates(records: Sequence[RecordResult]) -> dict:
    n = len(records)
    if n == 0:
        return {"records": 0}
    return {
        "records": n,
        "failed_records": sum(r.error is not None for r in records),
        "accuracy": math.fsum(r.em for r in records) / n,
        "exact_match": math.fsum(r.em for r in records) / n,
        "f1": math.fsum(r.f1 for r in records) / n,
        "majority_vote_accuracy": math.fsum(r.majority_em for r in records) / n,
        "avg_tokens": math.fsum(r.tokens for r in records) / n,
        "avg_steps": math.fsum(r.steps for r in records) / n,
        "token_counting": _counting_mode(
            [CompletionUsage("", 0, r.tokens_reported, 0) for r in records]
        ),
        "dropped_traces": sum(r.dropped_traces for r in records),
        "dropped_samples": sum(r.dropped_samples for r in records),
    }


@dataclass
class RunReport:
    records: list[RecordResult]
    aggregates: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    efficiency: dict | None = None

    @classmethod
    def build(cls, records, config=None, seeds=None, efficiency=None) -> "RunReport":
        return cls(list(records), compute_aggregates(records), config or {}, seeds or {}, efficiency)

    def to_dict(self) -> dict:
        return {
            "aggregates": self.aggregates,
            "config": self.config,
            "seeds": self.seeds,
            "efficiency": self.efficiency,
            "records": [asdict(r) for r in self.records],
        }


def _check_aggregates(report: RunReport) -> None:
    fresh = compute_aggregates(report.records)
    for key, value in fresh.items():
        stored = report.aggregates.get(key)
        if isinstance(value, float):
            ok = isinstance(stored, (int, float)) and abs(stored - value) <= AGGREGATE_TOL
        else:
            ok = stored == value
        if not ok:
            raise AggregateMismatch(f"aggregate {key!r}: stored {stored!r} != recomputed {value!r}")


def write_report(report: RunReport, path: str | os.PathLike) -> tuple[Path, Path]:
    """Write ``report.json`` and ``report.csv`` into directory ``path``."""
    _check_aggregates(report)
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        json_path = out / "report.json"
        csv_path = out / "report.csv"
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True, ensure_ascii=False)
            fh.write("\n")
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_FIELDS)
            for r in report.records:
                writer.writerow(["" if getattr(r, f) is None else getattr(r, f) for f in CSV_FIELDS])
    except OSError as exc:
        raise ReportIOError(f"cannot write report to {out}: {exc}") from exc
    return json_path, csv_path
