"""Causal prompting over sketch traces.

Routes a query to a reasoning paradigm, samples sketch traces across a
temperature sweep, clusters them, re-prompts each cluster representative
with similarity-ranked demonstrations, and picks the answer with the largest
front-door estimate of P(A | do(Q)).
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    CanonicalAnswer,
    Query,
    SketchTrace,
    TaskKind,
    approx_token_count,
    canonicalize_answer,
    cosine_similarity,
    count_reasoning_steps,
    extract_boxed,
)
from .estimator import aggregate, answer_distribution, external_factor, majority_vote, select_answer  # noqa: E402
from .router import AdjustmentKind, Paradigm, select_adjustment, softmax  # noqa: E402
from .traces import TemperatureSchedule, cluster_traces, cluster_weights, kmeans  # noqa: E402

__all__ = [
    "AdjustmentKind",
    "CanonicalAnswer",
    "Paradigm",
    "Query",
    "SketchTrace",
    "TaskKind",
    "TemperatureSchedule",
    "aggregate",
    "answer_distribution",
    "approx_token_count",
    "canonicalize_answer",
    "cluster_traces",
    "cluster_weights",
    "cosine_similarity",
    "count_reasoning_steps",
    "external_factor",
    "extract_boxed",
    "kmeans",
    "majority_vote",
    "select_adjustment",
    "select_answer",
    "softmax",
]
