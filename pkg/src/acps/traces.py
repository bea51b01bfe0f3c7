"""Sketch-trace generation over a temperature sweep, and K-means clustering of the traces.

Cluster shares |C_k|/M estimate how likely each family of reasoning is for
the query; the member nearest each centroid stands in for its cluster.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from math import comb
from typing import Sequence

import numpy as np

from .backends import CompletionBackend, CompletionRequest, DEFAULT_MAX_TOKENS, DEFAULT_TOP_P, map_bounded
from .core import Query, SketchTrace, check_embeddings
from .errors import AllTracesFailed, InconsistentM, KTooLarge, SafetyRefusal, ZeroVector
from .prompts import sketch_prompt
from .router import Paradigm

log = logging.getLogger(__name__)

MAX_LLOYD_ITERATIONS = 100
DEFAULT_K = 4
# K-subset starts are enumerated exhaustively when there are at most this many
EXHAUSTIVE_START_LIMIT = 256
DEFAULT_RANDOM_STARTS = 10
TIE_TOL = 1e-12


@dataclass(frozen=True)
class TemperatureSchedule:
    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("temperature schedule must be nonempty")
        if any(not 0.0 <= v <= 2.0 for v in vals):
            raise ValueError(f"temperatures must lie in [0, 2]: {vals}")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError(f"temperatures must be strictly increasing: {vals}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def sweep(cls, start: float = 0.0, stop: float = 2.0, step: float = 0.25) -> "TemperatureSchedule":
        n = int(round((stop - start) / step))
        return cls(tuple(round(start + i * step, 10) for i in range(n + 1)))

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


DEFAULT_SCHEDULE = TemperatureSchedule.sweep()


@dataclass
class TraceDrop:
    schedule_index: int
    temperature: float
    reason: str


def generate_traces(
    query: Query,
    paradigm: Paradigm,
    schedule: TemperatureSchedule,
    backend: CompletionBackend,
    *,
    top_p: float = DEFAULT_TOP_P,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    parallelism: int = 1,
    drops: list[TraceDrop] | None = None,
) -> list[SketchTrace]:
    """One completion per temperature; refused or empty samples are dropped.

    The number of surviving traces is the M used downstream. Dropped samples
    are appended to ``drops`` when a list is supplied.
    """
    prompt = sketch_prompt(paradigm, query.question, query.external_knowledge, query.choices)
    requests = [
        CompletionRequest(prompt, temperature=t, top_p=top_p, max_tokens=max_tokens, sample_index=0)
        for t in schedule
    ]
    outcomes = map_bounded(backend.complete, requests, parallelism)

    traces = []
    for idx, (req, out) in enumerate(zip(requests, outcomes)):
        if isinstance(out, SafetyRefusal):
            reason = "safety_refusal"
        elif isinstance(out, BaseException):
            raise out
        elif not out.text.strip():
            reason = "empty_completion"
        else:
            traces.append(SketchTrace.parse(out.text, req.temperature, idx, out.completion_tokens))
            continue
        log.info("query %s: dropped trace at T=%.2f (%s)", query.id, req.temperature, reason)
        if drops is not None:
            drops.append(TraceDrop(idx, req.temperature, reason))
    if not traces:
        raise AllTracesFailed(f"query {query.id}: every trace generation failed")
    return traces


# --- K-means -------------------------------------------------------------------


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    sse: float
    history: list[float]
    n_iter: int
    points: np.ndarray  # the L2-normalized inputs the clustering ran on


def l2_normalize(vectors: Sequence[Sequence[float]]) -> np.ndarray:
    arr = check_embeddings(vectors)
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms == 0.0):
        raise ZeroVector("cannot normalize a zero embedding")
    return arr / norms[:, None]


def partition_sse(points: np.ndarray, assignments: Sequence[int]) -> float:
    assignments = np.asarray(assignments)
    total = 0.0
    for label in np.unique(assignments):
        members = points[assignments == label]
        total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _plusplus_init(points: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    for _ in range(1, K):
        d2 = _sq_dists(points, points[chosen]).min(axis=1)
        d2[chosen] = 0.0
        total = d2.sum()
        if total <= 0.0:
            rest = [i for i in range(n) if i not in chosen]
            chosen.append(int(rng.choice(rest)))
        else:
            chosen.append(int(rng.choice(n, p=d2 / total)))
    return points[chosen].copy()


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int, assign: np.ndarray | None = None):
    K = len(centers)
    if assign is None:
        assign = _sq_dists(points, centers).argmin(axis=1)
    history: list[float] = []
    rows = np.arange(len(points))
    n_iter = 0
    while True:
        n_iter += 1
        _repair_empty(points, centers, assign, K)
        centers = np.stack([points[assign == j].mean(axis=0) for j in range(K)])
        d = _sq_dists(points, centers)
        history.append(float(d[rows, assign].sum()))
        if n_iter >= max_iter:
            break
        best = d.argmin(axis=1)
        # keep the current label on exact ties so assignments cannot oscillate
        new_assign = np.where(d[rows, assign] <= d[rows, best], assign, best)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return assign, centers, history, n_iter


def _hartigan(points: np.ndarray, assign: np.ndarray, K: int, history: list[float]) -> int:
    """Single-point transfers that strictly lower SSE once centroids are re-fit.

    Escapes Lloyd fixed points where moving one point would help. Returns the
    number of moves; each move appends the new SSE to ``history``.
    """
    sums = np.zeros((K, points.shape[1]))
    np.add.at(sums, assign, points)
    sizes = np.bincount(assign, minlength=K).astype(float)
    sse = partition_sse(points, assign)
    moves = 0
    improved = True
    while improved:
        improved = False
        for i, x in enumerate(points):
            a = assign[i]
            if sizes[a] <= 1:
                continue
            d = ((x - sums / sizes[:, None]) ** 2).sum(axis=1)
            gain_out = sizes[a] / (sizes[a] - 1) * d[a]
            cost_in = sizes / (sizes + 1) * d
            cost_in[a] = np.inf
            b = int(cost_in.argmin())
            if cost_in[b] < gain_out - TIE_TOL:
                assign[i] = b
                sums[a] -= x
                sums[b] += x
                sizes[a] -= 1
                sizes[b] += 1
                sse += cost_in[b] - gain_out
                moves += 1
                improved = True
                history.append(float(sse))
    return moves


def _canonical(assign: np.ndarray) -> tuple[int, ...]:
    """Partition key independent of label names (labels renumbered by first appearance)."""
    relabel: dict[int, int] = {}
    return tuple(relabel.setdefault(int(a), len(relabel)) for a in assign)


def _repair_empty(points, centers, assign, K) -> None:
    """Reseed each empty cluster with the point farthest from its own centroid."""
    for j in range(K):
        if np.any(assign == j):
            continue
        sizes = np.bincount(assign, minlength=K)
        dist = ((points - centers[assign]) ** 2).sum(axis=1)
        dist[sizes[assign] <= 1] = -1.0
        p = int(dist.argmax())
        assign[p] = j
        centers[j] = points[p]


def kmeans(
    vectors: Sequence[Sequence[float]],
    K: int,
    seed: int = 0,
    *,
    max_iter: int = MAX_LLOYD_ITERATIONS,
    n_random_starts: int = DEFAULT_RANDOM_STARTS,
) -> KMeansResult:
    """Lloyd's algorithm on L2-normalized vectors; best of several seeded starts.

    Starts are k-means++ draws from ``seed``; on small inputs every K-subset
    of points is tried as a start as well. Deterministic for fixed inputs,
    K and seed.
    """
    points = l2_normalize(vectors)
    n = len(points)
    if not 1 <= K <= n:
        raise KTooLarge(f"K={K} must lie in [1, {n}]")

    rng = np.random.default_rng(seed)
    starts = [_plusplus_init(points, K, rng) for _ in range(n_random_starts)]
    if comb(n, K) <= EXHAUSTIVE_START_LIMIT:
        starts.extend(points[list(c)].copy() for c in combinations(range(n), K))

    best = None
    seen: set[tuple[int, ...]] = set()
    for centers in starts:
        assign, cents, history, n_iter = _lloyd(points, centers, max_iter)
        key = _canonical(assign)
        if key in seen:
            continue  # same Lloyd fixed point as an earlier start; the outcome would repeat
        seen.add(key)
        while _hartigan(points, assign, K, history):
            assign, cents, more, extra = _lloyd(points, cents, max_iter, assign)
            history.extend(more)
            n_iter += extra
        sse = history[-1]
        if best is None or sse < best.sse - TIE_TOL:
            best = KMeansResult(assign, cents, sse, history, n_iter, points)
    return best


def select_representatives(
    assignments: Sequence[int],
    centroids: np.ndarray,
    points: np.ndarray,
    schedule_indices: Sequence[int] | None = None,
) -> list[int]:
    """Per cluster, the member closest to its centroid (ties: smallest schedule index)."""
    assignments = np.asarray(assignments)
    if schedule_indices is None:
        schedule_indices = list(range(len(assignments)))
    reps = []
    for j in range(len(centroids)):
        members = np.flatnonzero(assignments == j)
        dist = np.linalg.norm(points[members] - centroids[j], axis=1)
        lo = dist.min()
        tied = [int(m) for m, d in zip(members, dist) if d - lo <= TIE_TOL]
        reps.append(min(tied, key=lambda m: schedule_indices[m]))
    return reps


def cluster_weights(assignments: Sequence[int], M: int, K: int | None = None) -> list[float]:
    sizes = np.bincount(np.asarray(assignments, dtype=int), minlength=K or 0)
    if int(sizes.sum()) != M:
        raise InconsistentM(f"cluster sizes sum to {int(sizes.sum())}, expected M={M}")
    return [int(s) / M for s in sizes]


@dataclass
class Cluster:
    members: tuple[int, ...]
    centroid: np.ndarray
    representative_index: int
    weight: float

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass
class TraceClustering:
    clusters: list[Cluster]
    total_traces: int
    seed: int
    k_requested: int
    sse: float
    history: list[float] = field(default_factory=list)

    @property
    def weights(self) -> list[float]:
        return [c.weight for c in self.clusters]


def cluster_traces(
    traces: Sequence[SketchTrace],
    embeddings: Sequence[Sequence[float]],
    K: int = DEFAULT_K,
    seed: int = 0,
) -> TraceClustering:
    """Cluster trace embeddings; K is clamped to M when fewer traces survived.

    Clusters are listed largest first, ties by earliest member.
    """
    M = len(traces)
    if len(embeddings) != M:
        raise ValueError(f"{len(embeddings)} embeddings for {M} traces")
    k_used = K
    if M < K:
        log.warning("only %d traces survived; clamping K from %d to %d", M, K, M)
        k_used = M
    result = kmeans(embeddings, k_used, seed)
    sched = [t.schedule_index for t in traces]
    reps = select_representatives(result.assignments, result.centroids, result.points, sched)
    weights = cluster_weights(result.assignments, M, k_used)

    clusters = [
        Cluster(tuple(int(i) for i in np.flatnonzero(result.assignments == j)), result.centroids[j], reps[j], weights[j])
        for j in range(k_used)
    ]
    clusters.sort(key=lambda c: (-c.size, c.members[0]))
    return TraceClustering(clusters, M, seed, K, result.sse, result.history)
