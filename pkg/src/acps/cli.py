"""Command-line entry point.

    acps run --config run.json [--jobs N] [--out DIR] [--seed N] [--dataset PATH]
    acps classify [--config run.json] (--question TEXT | --dataset PATH)
    acps perturb --mode inject|shuffle --seed N --dataset PATH --out PATH [--pool PATH]
    acps eval --predictions preds.jsonl --dataset gold.jsonl [--out metrics.json]
    acps report --out RUN_DIR

Exit codes: 0 success, 1 some records failed, 2 configuration or I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import RunConfig, load_config
from .core import canonicalize_answer
from .errors import ACPSError, EmptyAnswer, EmptyPool, NoEvidence, UnmappableChoice
from .harness import (
    load_dataset,
    load_pool,
    perturb_inject,
    perturb_shuffle,
    score_prediction,
    write_dataset,
)
from .pipeline import build_router, derive_seed, reaggregate, run_pipeline
from .router import select_adjustment

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("acps")


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True, ensure_ascii=False)
    sys.stdout.write("\n")


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.pipeline.seed = args.seed
    if args.dataset:
        config.paths.dataset = args.dataset
    result = run_pipeline(config, args.out, jobs=args.jobs)
    agg = result.report.aggregates
    print(f"run directory: {result.run_dir}")
    print(f"records: {agg.get('records', 0)}  failed: {len(result.failed)}  "
          f"accuracy: {agg.get('accuracy', 0.0):.4f}  f1: {agg.get('f1', 0.0):.4f}")
    for rid in result.failed:
        print(f"  failed: {rid}", file=sys.stderr)
    return result.exit_code


def cmd_classify(args) -> int:
    config = load_config(args.config) if args.config else RunConfig().validate()
    router = build_router(config)
    if args.question:
        items = [("question", args.question, False)]
    else:
        items = [(r.id, r.question, bool(r.evidence)) for r in load_dataset(args.dataset)]
    for rid, question, has_evidence in items:
        decision = router.classify(question)
        out = {"id": rid, **decision.to_dict()}
        out["adjustment"] = select_adjustment(decision.chosen, has_evidence).value
        print(json.dumps(out, sort_keys=True, ensure_ascii=False))
    return EXIT_OK


def cmd_perturb(args) -> int:
    records = load_dataset(args.dataset)
    pool = load_pool(args.pool) if args.mode == "inject" and args.pool else []
    if args.mode == "inject" and not pool:
        raise EmptyPool("inject mode needs a nonempty --pool file")
    out, skipped = [], 0
    for r in records:
        seed = derive_seed(args.seed, r.id)
        try:
            if args.mode == "shuffle":
                out.append(perturb_shuffle(r, seed))
            else:
                # the pool is filtered per record so it stays disjoint from that record's evidence
                usable = [d for d in pool if d not in set(r.evidence)]
                out.append(perturb_inject(r, usable, seed))
        except (NoEvidence, EmptyPool) as exc:
            log.warning("record %s left unchanged: %s", r.id, exc)
            out.append(r)
            skipped += 1
    write_dataset(out, args.out)
    print(f"wrote {len(out)} records to {args.out} ({skipped} unchanged)")
    return EXIT_OK


def cmd_eval(args) -> int:
    gold = {r.id: r for r in load_dataset(args.dataset)}
    preds = {}
    with open(args.predictions, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                preds[str(obj["id"])] = obj.get("pred")
    rows = []
    for rid, record in gold.items():
        raw = preds.get(rid)
        canon = None
        if raw is not None:
            try:
                canon = canonicalize_answer(str(raw), record.task_kind, record.choices).value
            except (EmptyAnswer, UnmappableChoice):
                canon = None
        em, f1 = score_prediction(canon, record)
        rows.append({"id": rid, "pred": canon, "gold": record.gold_answer, "em": em, "f1": f1})
    n = len(rows)
    metrics = {
        "records": n,
        "missing_predictions": sum(rid not in preds for rid in gold),
        "accuracy": sum(r["em"] for r in rows) / n if n else 0.0,
        "exact_match": sum(r["em"] for r in rows) / n if n else 0.0,
        "f1": sum(r["f1"] for r in rows) / n if n else 0.0,
        "rows": rows,
    }
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(metrics, fh, indent=2, sort_keys=True)
            fh.write("\n")
    _emit({k: v for k, v in metrics.items() if k != "rows"})
    return EXIT_OK


def cmd_report(args) -> int:
    report = reaggregate(args.out)
    _emit(report.aggregates)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acps", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the full pipeline over a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--dataset")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("classify", help="route questions to reasoning paradigms")
    p.add_argument("--config")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--question")
    g.add_argument("--dataset")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("perturb", help="write an evidence-perturbed copy of a dataset")
    p.add_argument("--mode", choices=("inject", "shuffle"), required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pool", help="distractor file, one item per line (inject mode)")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("eval", help="score a predictions file against a gold dataset")
    p.add_argument("--predictions", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="re-aggregate an existing run directory")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ACPSError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
