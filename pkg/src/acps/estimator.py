"""Answer sampling per cluster prompt and front-door aggregation of the answer distributions.

The estimate of the interventional answer distribution is

    score(a) = prod_i P(e_i) * sum_k (|C_k| / M) * (1/S_k) * #{s : a_{k,s} = a}

where S_k counts only the parseable samples of cluster k.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .backends import CompletionBackend, CompletionRequest, DEFAULT_MAX_TOKENS, DEFAULT_TOP_P, map_bounded
from .core import CanonicalAnswer, Query, canonicalize_answer, extract_boxed, extract_improved_block, resolve_token_count
from .demos import InterventionPrompt
from .errors import (
    AllSamplesUnparseable,
    EmptyAnswer,
    EmptyScores,
    LengthMismatch,
    NoParseableSamples,
    SafetyRefusal,
    UnmappableChoice,
    WeightCountMismatch,
    WeightOutOfRange,
)

DEFAULT_S = 3
DEFAULT_ANSWER_TEMPERATURE = 0.7
SCORE_TIE_TOL = 1e-12


@dataclass
class AnswerSample:
    sample_index: int
    raw_text: str
    canonical: CanonicalAnswer | None  # None marks an unparseable sample
    improved_trace: str | None = None
    completion_tokens: int = 0
    tokens_reported: bool = True
    failure: str | None = None

    @property
    def parseable(self) -> bool:
        return self.canonical is not None

    def to_dict(self) -> dict:
        return {
            "sample_index": self.sample_index,
            "raw_text": self.raw_text,
            "canonical": None if self.canonical is None else self.canonical.value,
            "improved_trace": self.improved_trace,
            "completion_tokens": self.completion_tokens,
            "tokens_reported": self.tokens_reported,
            "failure": self.failure,
        }


@dataclass
class ClusterEvidence:
    cluster_index: int
    weight: float
    samples: list[AnswerSample]
    distribution: dict[str, float]
    demo_ids: tuple[str, ...] = ()
    representative_index: int | None = None

    @property
    def dropped(self) -> int:
        return sum(not s.parseable for s in self.samples)

    def to_dict(self) -> dict:
        return {
            "cluster_index": self.cluster_index,
            "weight": self.weight,
            "representative_index": self.representative_index,
            "demo_ids": list(self.demo_ids),
            "distribution": self.distribution,
            "samples": [s.to_dict() for s in self.samples],
        }


@dataclass(frozen=True)
class ExternalFactor:
    per_element: tuple[float, ...]
    product: float


@dataclass
class CausalEstimate:
    scores: dict[str, float]
    external_factor: float
    chosen: str
    per_cluster: list[ClusterEvidence] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "scores": self.scores,
            "external_factor": self.external_factor,
            "chosen": self.chosen,
            "per_cluster": [c.to_dict() for c in self.per_cluster],
        }


def _parse_sample(idx: int, text: str, tokens: int | None, query: Query) -> AnswerSample:
    n_tokens, reported = resolve_token_count(tokens, text)
    improved = extract_improved_block(text)
    raw = extract_boxed(text)
    if raw is None:
        return AnswerSample(idx, text, None, improved, n_tokens, reported, "no_boxed_answer")
    try:
        canon = canonicalize_answer(raw, query.task_kind, query.choices)
    except (EmptyAnswer, UnmappableChoice) as exc:
        return AnswerSample(idx, text, None, improved, n_tokens, reported, type(exc).__name__)
    return AnswerSample(idx, text, canon, improved, n_tokens, reported)


def sample_answers(
    prompt: InterventionPrompt,
    S: int,
    backend: CompletionBackend,
    query: Query,
    answer_temperature: float = DEFAULT_ANSWER_TEMPERATURE,
    *,
    top_p: float = DEFAULT_TOP_P,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    parallelism: int = 1,
) -> list[AnswerSample]:
    """S completions of the intervention prompt, sample_index 0..S-1.

    Samples without a usable boxed answer (or refused by the provider) keep a
    ``None`` canonical answer and are left out of the distribution.
    """
    if S < 1:
        raise ValueError("S must be >= 1")
    requests = [
        CompletionRequest(prompt.text, answer_temperature, top_p, max_tokens, sample_index=s) for s in range(S)
    ]
    samples = []
    for req, out in zip(requests, map_bounded(backend.complete, requests, parallelism)):
        if isinstance(out, SafetyRefusal):
            samples.append(AnswerSample(req.sample_index, "", None, None, 0, False, "safety_refusal"))
        elif isinstance(out, BaseException):
            raise out
        else:
            samples.append(_parse_sample(req.sample_index, out.text, out.completion_tokens, query))
    if not any(s.parseable for s in samples):
        raise AllSamplesUnparseable(f"cluster {prompt.cluster_index}: no parseable answer in {S} samples")
    return samples


def _values(samples: Iterable) -> list[str]:
    out = []
    for s in samples:
        if isinstance(s, AnswerSample):
            if s.parseable:
                out.append(s.canonical.value)
        elif isinstance(s, CanonicalAnswer):
            out.append(s.value)
        elif s is not None:
            out.append(str(s))
    return out


def answer_distribution(samples: Iterable) -> dict[str, float]:
    values = _values(samples)
    if not values:
        raise NoParseableSamples("no parseable samples to form a distribution")
    counts = Counter(values)
    return {a: c / len(values) for a, c in sorted(counts.items())}


def external_factor(query: Query, per_element_weights: Sequence[float] | None = None) -> ExternalFactor:
    n = len(query.external_knowledge)
    if per_element_weights is None:
        weights = (1.0,) * n
    else:
        weights = tuple(float(w) for w in per_element_weights)
        if len(weights) != n:
            raise WeightCountMismatch(f"{len(weights)} weights for {n} evidence items")
        if any(not 0.0 < w <= 1.0 for w in weights):
            raise WeightOutOfRange(f"evidence weights must lie in (0, 1]: {weights}")
    return ExternalFactor(weights, math.prod(weights))


def aggregate(
    weights: Sequence[float],
    distributions: Sequence[Mapping[str, float]],
    external: float | ExternalFactor = 1.0,
    per_cluster: Sequence[ClusterEvidence] = (),
) -> CausalEstimate:
    if len(weights) != len(distributions):
        raise LengthMismatch(f"{len(weights)} weights vs {len(distributions)} distributions")
    factor = external.product if isinstance(external, ExternalFactor) else float(external)
    answers = sorted({a for dist in distributions for a in dist})
    scores = {
        a: factor * math.fsum(w * dist.get(a, 0.0) for w, dist in zip(weights, distributions))
        for a in answers
    }
    counts = Counter(_values(s for c in per_cluster for s in c.samples))
    chosen = _argmax(scores, counts) if scores else ""
    return CausalEstimate(scores, factor, chosen, list(per_cluster))


def _argmax(scores: Mapping[str, float], counts: Mapping[str, int]) -> str:
    top = max(scores.values())
    tied = [a for a, v in scores.items() if top - v <= SCORE_TIE_TOL * max(1.0, abs(top))]
    return min(tied, key=lambda a: (-counts.get(a, 0), a))


def select_answer(estimate: CausalEstimate) -> str:
    """Highest score; ties by larger raw sample count, then smallest value."""
    if not estimate.scores:
        raise EmptyScores("no answer scores to choose from")
    counts = Counter(_values(s for c in estimate.per_cluster for s in c.samples))
    return _argmax(estimate.scores, counts)


def majority_vote(samples: Iterable) -> str:
    """Modal canonical answer over the pooled samples of every cluster."""
    counts = Counter(_values(samples))
    if not counts:
        raise NoParseableSamples("no parseable samples to vote over")
    return _argmax({a: float(c) for a, c in counts.items()}, counts)
