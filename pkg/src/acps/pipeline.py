"""End-to-end orchestration: one query through routing, traces, clustering, intervention and aggregation."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__
from .backends import (
    MockBackend,
    MockEmbedder,
    RemoteBackend,
    RemoteEmbedder,
    ReplayBackend,
    ReplayEmbedder,
    map_bounded,
)
from .config import RunConfig
from .core import SketchTrace, count_reasoning_steps, extract_improved_block
from .demos import DemoBank, build_intervention_prompt, load_demos, rank_demos
from .errors import ACPSError, AllSamplesUnparseable, ConfigError
from .estimator import (
    AnswerSample,
    ClusterEvidence,
    ExternalFactor,
    aggregate,
    answer_distribution,
    external_factor,
    majority_vote,
    sample_answers,
)
from .harness import (
    CompletionUsage,
    DatasetRecord,
    RecordResult,
    RunReport,
    efficiency_report,
    load_dataset,
    score_prediction,
    write_report,
)
from .router import AdjustmentKind, FixedRouter, HeuristicRouter, RemoteRouter, select_adjustment
from .traces import TraceDrop, cluster_traces, generate_traces

log = logging.getLogger(__name__)

QUERY_LOG = Path("logs") / "queries.jsonl"


def derive_seed(run_seed: int, record_id: str) -> int:
    digest = hashlib.sha256(f"{run_seed}:{record_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def file_digest(path: str | os.PathLike | None) -> str | None:
    if not path or not Path(path).is_file():
        return None
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def build_backends(config: RunConfig):
    b = config.backend
    if b.kind == "mock":
        completion = MockBackend(seed=b.mock_seed)
    elif b.kind == "replay":
        completion = ReplayBackend.from_jsonl(b.fixture_path)
    else:
        completion = RemoteBackend(b.base_url, b.model, max_attempts=b.max_attempts,
                                   backoff_base=b.backoff_base, timeout=b.timeout)
    kind = b.effective_embedding_kind
    if kind == "mock":
        embedder = MockEmbedder(b.embedding_dim, b.mock_seed)
    elif kind == "replay":
        embedder = ReplayEmbedder.from_jsonl(b.embedding_fixture_path)
    else:
        embedder = RemoteEmbedder(b.embedding_base_url or b.base_url, b.embedding_model,
                                  max_attempts=b.max_attempts, backoff_base=b.backoff_base, timeout=b.timeout)
    return completion, embedder


def build_router(config: RunConfig):
    r = config.router
    if r.fixed is not None and r.kind != "remote":
        return FixedRouter(r.fixed)
    if r.kind == "remote":
        return RemoteRouter(r.url, r.fallback)
    return HeuristicRouter(r.fallback, r.rules_path)


def completion_usage(traces: Sequence[SketchTrace], samples: Sequence[AnswerSample]) -> list[CompletionUsage]:
    """Efficiency rows: think-block steps for traces, improved-block steps for answers."""
    usage = [CompletionUsage("trace", t.completion_tokens, t.tokens_reported, t.step_count) for t in traces]
    usage += [
        CompletionUsage("answer", s.completion_tokens, s.tokens_reported,
                        count_reasoning_steps(s.improved_trace or extract_improved_block(s.raw_text)))
        for s in samples
    ]
    return usage


@dataclass
class QueryOutcome:
    result: RecordResult
    log: dict
    usage: list[CompletionUsage] = field(default_factory=list)


class Pipeline:
    def __init__(self, config: RunConfig, completion, embedder, router, bank: DemoBank):
        self.config = config
        self.completion = completion
        self.embedder = embedder
        self.router = router
        self.bank = bank

    def run_query(self, record: DatasetRecord, seed: int) -> QueryOutcome:
        p = self.config.pipeline
        query = record.to_query()
        decision = self.router.classify(query.question)
        adjustment = select_adjustment(decision.chosen, query.has_external_knowledge)

        drops: list[TraceDrop] = []
        traces = generate_traces(
            query, decision.chosen, p.schedule, self.completion,
            top_p=p.top_p, max_tokens=p.max_tokens, parallelism=p.parallelism, drops=drops,
        )
        vectors = self.embedder.embed([t.text for t in traces])
        clustering = cluster_traces(traces, vectors, p.K, seed)

        # the standard adjustment has no evidence term, so its factor is the empty product
        if adjustment is AdjustmentKind.CONDITIONAL:
            factor = external_factor(query, p.evidence_weights)
        else:
            factor = ExternalFactor((), 1.0)

        def run_cluster(k: int):
            cluster = clustering.clusters[k]
            rep = cluster.representative_index
            ranked = rank_demos(self.bank, vectors[rep])
            prompt = build_intervention_prompt(ranked, p.L, query, traces[rep].text, decision.chosen, k)
            samples = sample_answers(
                prompt, p.S, self.completion, query, p.answer_temperature,
                top_p=p.top_p, max_tokens=p.max_tokens,
            )
            return ClusterEvidence(k, cluster.weight, samples, answer_distribution(samples),
                                   prompt.demo_ids, traces[rep].schedule_index)

        outcomes = map_bounded(run_cluster, list(range(len(clustering.clusters))), p.parallelism)
        evidence, dropped_clusters = [], []
        for k, out in enumerate(outcomes):
            if isinstance(out, AllSamplesUnparseable):
                log.warning("query %s: cluster %d produced no parseable answer; dropped", record.id, k)
                dropped_clusters.append(k)
            elif isinstance(out, BaseException):
                raise out
            else:
                evidence.append(out)
        if not evidence:
            raise AllSamplesUnparseable(f"query {record.id}: no cluster produced a parseable answer")
        if dropped_clusters:
            kept = sum(c.weight for c in evidence)
            for c in evidence:
                c.weight = c.weight / kept

        estimate = aggregate([c.weight for c in evidence], [c.distribution for c in evidence], factor, evidence)
        all_samples = [s for c in evidence for s in c.samples]
        majority = majority_vote(all_samples)

        usage = completion_usage(traces, all_samples)
        em, f1 = score_prediction(estimate.chosen, record)
        maj_em, _ = score_prediction(majority, record)
        result = RecordResult(
            id=record.id,
            pred=estimate.chosen,
            gold=record.gold_answer,
            em=em,
            f1=f1,
            tokens=sum(u.completion_tokens for u in usage),
            steps=sum(t.step_count for t in traces) / len(traces),
            majority_pred=majority,
            majority_em=maj_em,
            tokens_reported=all(u.tokens_reported for u in usage),
            dropped_traces=len(drops),
            dropped_samples=sum(c.dropped for c in evidence),
            paradigm=decision.chosen.value,
            adjustment=adjustment.value,
        )
        entry = {
            "id": record.id,
            "seed": seed,
            "router": decision.to_dict(),
            "adjustment": adjustment.value,
            "traces": [
                {
                    "schedule_index": t.schedule_index,
                    "temperature": t.temperature,
                    "text": t.text,
                    "boxed_answer": t.boxed_answer,
                    "completion_tokens": t.completion_tokens,
                    "tokens_reported": t.tokens_reported,
                    "step_count": t.step_count,
                }
                for t in traces
            ],
            "dropped_traces": [asdict(d) for d in drops],
            "clustering": {
                "M": clustering.total_traces,
                "K_requested": clustering.k_requested,
                "sse": clustering.sse,
                "clusters": [
                    {
                        "members": [traces[i].schedule_index for i in c.members],
                        "representative": traces[c.representative_index].schedule_index,
                        "weight": c.weight,
                    }
                    for c in clustering.clusters
                ],
            },
            "dropped_clusters": dropped_clusters,
            "estimate": estimate.to_dict(),
            "chosen": estimate.chosen,
            "majority_vote": majority,
            "usage": [asdict(u) for u in usage],
            "result": asdict(result),
        }
        return QueryOutcome(result, entry, usage)


def failed_outcome(record: DatasetRecord, exc: Exception) -> QueryOutcome:
    result = RecordResult(record.id, None, record.gold_answer, 0, 0.0, 0, 0.0, tokens_reported=False,
                          error=f"{type(exc).__name__}: {exc}")
    return QueryOutcome(result, {"id": record.id, "error": result.error, "usage": [], "result": asdict(result)})


def report_config(config: RunConfig) -> dict:
    """Config snapshot for result files; the output location is left out so reruns compare equal."""
    snap = config.to_dict()
    snap["paths"].pop("output_dir", None)
    return snap


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class RunResult:
    exit_code: int
    run_dir: Path
    report: RunReport | None = None
    failed: list[str] = field(default_factory=list)


def run_pipeline(config: RunConfig, out_dir: str | os.PathLike | None = None, jobs: int = 1) -> RunResult:
    """Run every dataset record and write manifest, per-query logs and report into ``out_dir``.

    Configuration and input problems raise ConfigError before any backend
    is contacted; per-record failures are captured in the report.
    """
    paths = config.paths
    for name in ("dataset", "demos"):
        value = getattr(paths, name)
        if not value or not Path(value).is_file():
            raise ConfigError(f"paths.{name} does not point to a file: {value!r}")
    for name in ("fixture_path", "embedding_fixture_path"):
        value = getattr(config.backend, name)
        if value and not Path(value).is_file():
            raise ConfigError(f"backend.{name} does not point to a file: {value!r}")
    run_dir = Path(out_dir or paths.output_dir)
    records = load_dataset(paths.dataset)

    completion, embedder = build_backends(config)
    router = build_router(config)
    seed = config.pipeline.seed
    seeds = {"run": seed, "per_record": {r.id: derive_seed(seed, r.id) for r in records}}

    (run_dir / QUERY_LOG.parent).mkdir(parents=True, exist_ok=True)
    manifest = {
        "artifact_version": __version__,
        "config": config.to_dict(),
        "seeds": seeds,
        "backends": {
            "completion": completion.backend_id,
            "embedding": embedder.backend_id,
            "router": router.backend_id,
        },
        "input_digests": {
            "dataset": file_digest(paths.dataset),
            "demos": file_digest(paths.demos),
            "fixture": file_digest(config.backend.fixture_path),
            "embedding_fixture": file_digest(config.backend.embedding_fixture_path),
        },
        "started_at": _now(),
        "finished_at": None,
    }
    _write_json(run_dir / "manifest.json", manifest)

    bank = load_demos(paths.demos, embedder)
    if len(bank) < config.pipeline.L:
        raise ConfigError(f"pipeline.L={config.pipeline.L} but the demonstration bank holds {len(bank)}")
    pipeline = Pipeline(config, completion, embedder, router, bank)
    timings: dict[str, float] = {}

    def one(record: DatasetRecord) -> QueryOutcome:
        t0 = time.perf_counter()
        try:
            return pipeline.run_query(record, seeds["per_record"][record.id])
        except ACPSError as exc:
            log.error("record %s failed: %s", record.id, exc)
            return failed_outcome(record, exc)
        finally:
            timings[record.id] = time.perf_counter() - t0

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(one, records))
    else:
        outcomes = [one(r) for r in records]

    with open(run_dir / QUERY_LOG, "w", encoding="utf-8") as fh:
        for o in outcomes:
            fh.write(json.dumps(o.log, sort_keys=True, ensure_ascii=False) + "\n")

    report = assemble_report([o.result for o in outcomes], [u for o in outcomes for u in o.usage],
                             report_config(config), seeds)
    write_report(report, run_dir)

    manifest["finished_at"] = _now()
    manifest["timings_seconds"] = timings
    _write_json(run_dir / "manifest.json", manifest)

    failed = [o.result.id for o in outcomes if o.result.error]
    return RunResult(1 if failed else 0, run_dir, report, failed)


def assemble_report(results: Sequence[RecordResult], usage: Sequence[CompletionUsage], config: dict, seeds: dict) -> RunReport:
    efficiency = efficiency_report(usage) if usage else None
    return RunReport.build(results, config, seeds, efficiency)


def reaggregate(run_dir: str | os.PathLike) -> RunReport:
    """Rebuild report.json/report.csv from an existing run's manifest and query log."""
    run_dir = Path(run_dir)
    try:
        with open(run_dir / "manifest.json", encoding="utf-8") as fh:
            manifest = json.load(fh)
        with open(run_dir / QUERY_LOG, encoding="utf-8") as fh:
            entries = [json.loads(line) for line in fh if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read run directory {run_dir}: {exc}") from exc
    results = [RecordResult(**e["result"]) for e in entries]
    usage = [CompletionUsage(**u) for e in entries for u in e.get("usage", [])]
    config = manifest["config"]
    config["paths"].pop("output_dir", None)
    report = assemble_report(results, usage, config, manifest["seeds"])
    write_report(report, run_dir)
    return report
