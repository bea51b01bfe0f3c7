"""Regenerate the replay fixtures for the two worked case studies under tests/fixtures/golden/.

Each case directory gets dataset.jsonl, demos.jsonl, completions.jsonl,
embeddings.jsonl and config.json. Prompt digests are computed with the
package's own prompt builders, so rerun this after any template change.

Trace embeddings are hand-placed: every cluster sits on its own axis and
its members are spread symmetrically around the representative, so K-means
recovers the intended partition and the intended representatives.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from acps.backends import ReplayEmbedder, sha256_hex
from acps.demos import build_intervention_prompt, load_demos, rank_demos
from acps.harness import parse_record
from acps.prompts import sketch_prompt
from acps.router import Paradigm
from acps.traces import DEFAULT_SCHEDULE

ROOT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "golden"
DIM = 8
ANSWER_T = 0.7


def axis(i: int, scale: float = 1.0) -> np.ndarray:
    v = np.zeros(DIM)
    v[i] = scale
    return v


def member_vectors(cluster: int, size: int) -> list[np.ndarray]:
    """Representative first; the others straddle it along a private axis."""
    base = axis(cluster)
    offsets = {1: [0.0], 2: [0.0, 0.2], 3: [0.0, 0.2, -0.2]}[size]
    return [base + axis(4 + cluster, o) for o in offsets]


def write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def completion_row(prompt: str, temperature: float, sample_index: int, text: str | None) -> dict:
    row = {"prompt_sha256": sha256_hex(prompt), "temperature": temperature, "sample_index": sample_index}
    if text is None:
        row.update(text="", completion_tokens=0, prompt_tokens=len(prompt.split()), refusal=True)
    else:
        row.update(text=text, completion_tokens=len(text.split()), prompt_tokens=len(prompt.split()))
    return row


def build_case(name: str, record: dict, demos: list[dict], demo_vectors: list[np.ndarray],
               clusters: list[dict], refused: list[int], paradigm: Paradigm) -> None:
    out = ROOT / name
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "dataset.jsonl", [record])
    write_jsonl(out / "demos.jsonl", demos)
    rec = parse_record(record)

    sketch = sketch_prompt(paradigm, rec.question, rec.evidence, rec.choices)
    slot_text: dict[int, str] = {}
    slot_vec: dict[int, np.ndarray] = {}
    for k, c in enumerate(clusters):
        for slot, text, vec in zip(c["slots"], c["traces"], member_vectors(k, len(c["slots"]))):
            slot_text[slot] = text
            slot_vec[slot] = vec

    completions = []
    for idx, t in enumerate(DEFAULT_SCHEDULE):
        completions.append(completion_row(sketch, t, 0, None if idx in refused else slot_text[idx]))

    embed_rows = {}
    for slot, text in slot_text.items():
        embed_rows[sha256_hex(text)] = slot_vec[slot].tolist()
    for d, v in zip(demos, demo_vectors):
        embed_rows[sha256_hex(d["correct_trace"])] = v.tolist()
    write_jsonl(out / "embeddings.jsonl", [{"text_sha256": h, "vector": v} for h, v in embed_rows.items()])

    bank = load_demos(out / "demos.jsonl", ReplayEmbedder.from_jsonl(out / "embeddings.jsonl"))
    query = rec.to_query()
    for k, c in enumerate(clusters):
        rep_slot = c["slots"][0]
        ranked = rank_demos(bank, slot_vec[rep_slot])
        prompt = build_intervention_prompt(ranked, 2, query, slot_text[rep_slot], paradigm, k)
        for s, text in enumerate(c["answers"]):
            completions.append(completion_row(prompt.text, ANSWER_T, s, text))
    write_jsonl(out / "completions.jsonl", completions)

    config = {
        "backend": {
            "kind": "replay",
            "fixture_path": "completions.jsonl",
            "embedding_kind": "replay",
            "embedding_fixture_path": "embeddings.jsonl",
        },
        "pipeline": {"K": 4, "S": 3, "L": 2, "answer_temperature": ANSWER_T, "parallelism": 4, "seed": 0},
        "router": {"kind": "fixed", "fixed": paradigm.value},
        "paths": {"dataset": "dataset.jsonl", "demos": "demos.jsonl", "output_dir": "run"},
    }
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2)
        fh.write("\n")


def think(body: str, boxed: str) -> str:
    return f"<think>\nLet's think through this step by step\n{body}\n</think>\n\\boxed{{{boxed}}}"


def improved(body: str, boxed: str) -> str:
    return f"<improved_rs> {body} </improved_rs> \\boxed{{{boxed}}}"


def commonsense_case() -> None:
    record = {
        "id": "csqa-glue-sticks",
        "question": "Where do adults use glue sticks?",
        "choices": {"A": "classroom", "B": "desk drawer", "C": "at school", "D": "office", "E": "kitchen drawer"},
        "answer": "D",
        "task_kind": "multiple_choice",
    }
    demos = [
        {"id": "csqa-d1", "question": "Where would you find a stapler in an office?",
         "wrong_trace": think("#stapler → #school → #classroom", "classroom"),
         "correct_trace": think("#stapler → #office_supplies → #desk", "desk"), "answer": "desk"},
        {"id": "csqa-d2", "question": "Where do people usually keep spare pens at work?",
         "wrong_trace": think("#pens → #kitchen", "kitchen drawer"),
         "correct_trace": think("#pens → #work → #desk_drawer", "desk drawer"), "answer": "desk drawer"},
        {"id": "csqa-d3", "question": "Where do children use crayons most?",
         "wrong_trace": think("#crayons → #office", "office"),
         "correct_trace": think("#crayons → #children → #school", "school"), "answer": "school"},
    ]
    demo_vectors = [axis(0) + axis(1, 0.5), axis(1) + axis(2, 0.3), axis(2) + axis(3, 0.4)]
    clusters = [
        {
            "slots": [0, 3, 6],
            "traces": [
                think("#adults → office → desk", "office"),
                think("#adults → office → desk → stationery", "office"),
                think("#adults → workplace → office", "office"),
            ],
            "answers": [
                improved("#glue_stick → #adults → #office", "D"),
                improved("#glue_stick → #adults → #desk_drawer", "B"),
                improved("#glue_stick → #home → #kitchen_drawer", "E"),
            ],
        },
        {
            "slots": [1, 4, 7],
            "traces": [
                think("#glue_stick → children → school #adults → office", "office"),
                think("#glue_stick → children → school #adults → work", "office"),
                think("#glue_stick → kids → school #grownups → office", "D"),
            ],
            "answers": [
                improved("#glue_stick → #adults → #office", "D"),
                improved("#glue_stick → #adults → #work → #office", "office"),
                improved("#glue_stick → #home_crafts → #kitchen_drawer", "E"),
            ],
        },
        {
            "slots": [2, 5],
            "traces": [
                think("#glue_stick → common_use → school", "at school"),
                think("#glue_stick → common_use → school → projects", "C"),
            ],
            "answers": [
                improved("#glue_stick → #common_use → #school", "C"),
                improved("#glue_stick → #projects → #school", "at school"),
                improved("#glue_stick → #storage → #desk_drawer", "B"),
            ],
        },
        {
            "slots": [8],
            "traces": [
                think("#adulthood → specific_tasks → work_supplies → desk_drawer → classroom_setting → glue_stick_use",
                      "classroom"),
            ],
            "answers": [
                improved("#glue_stick → #adult_tasks → #teaching → #classroom", "A"),
                improved("#glue_stick → #teachers → #classroom", "A"),
                improved("#glue_stick → #teaching → #classroom", "classroom"),
            ],
        },
    ]
    build_case("commonsenseqa", record, demos, demo_vectors, clusters, refused=[], paradigm=Paradigm.CC)


def hotpot_case() -> None:
    record = {
        "id": "hotpot-backflip-driver",
        "question": "The driver know for doing backflips off his car lost to which driver in the 2009 "
                    "NASCAR Nationwide Series?",
        "evidence": [
            "With 25 top-five finishes, Kyle Busch was the season champion.",
            "He finished 210 points clear of Carl Edwards and 318 ahead of Brad Keselowski.",
            "Edwards is well known for doing a backflip off of his car to celebrate a victory, which was a "
            "result of saving himself from a potential fall when he had his first win.",
        ],
        "answer": "Kyle Busch",
        "task_kind": "open",
    }
    demos = [
        {"id": "hp-d1", "question": "Which team did the 2004 rookie of the year drive for?",
         "evidence": ["Kasey Kahne was the 2004 rookie of the year.", "Kahne drove for Evernham Motorsports."],
         "wrong_trace": think("#2004 rookie → Kahne → team not stated", "not mentioned"),
         "correct_trace": think("#2004 rookie → Kasey Kahne\n#Kahne → Evernham Motorsports", "Evernham Motorsports"),
         "answer": "Evernham Motorsports"},
        {"id": "hp-d2", "question": "Who beat the driver famous for the victory lap burnout in 2008?",
         "evidence": ["Jimmie Johnson won the 2008 title.", "Carl Edwards finished second in 2008."],
         "wrong_trace": think("#burnout driver → Edwards → champion", "Carl Edwards"),
         "correct_trace": think("#2008 runner-up → Carl Edwards\n#2008 champion → Jimmie Johnson", "Jimmie Johnson"),
         "answer": "Jimmie Johnson"},
        {"id": "hp-d3", "question": "In which city was the winner of the 2007 season born?",
         "evidence": ["Carl Edwards won the 2007 Busch Series.", "Edwards was born in Columbia, Missouri."],
         "wrong_trace": think("#2007 winner → Kyle Busch → Las Vegas", "Las Vegas"),
         "correct_trace": think("#2007 winner → Carl Edwards → Columbia, Missouri", "Columbia, Missouri"),
         "answer": "Columbia, Missouri"},
    ]
    demo_vectors = [axis(0, 0.8) + axis(3, 0.6), axis(1) + axis(0, 0.3), axis(2) + axis(3, 0.5)]
    clusters = [
        {
            "slots": [0, 3, 6],
            "traces": [
                think("#Driver known for backflips off car → Edwards\n"
                      "#Edwards → lost to Kyle Busch in 2009 NASCAR Nationwide Series", "Kyle Busch"),
                think("#backflip driver → Carl Edwards\n#2009 champion → Kyle Busch", "Kyle Busch"),
                think("#backflips → Edwards\n#Edwards → runner-up to Kyle Busch", "Kyle Busch"),
            ],
            "answers": [
                improved("#Driver known for backflips off car → Edwards #Edwards lost to → Kyle Busch", "Kyle Busch"),
                improved("#backflips → Carl Edwards #2009 champion → Kyle Busch", "Kyle Busch"),
                improved("#Edwards' competition in 2009 NASCAR Nationwide Series → Kyle Busch", "Kyle Busch"),
            ],
        },
        {
            "slots": [1, 4],
            "traces": [
                think("#Driver known for doing backflips → Carl Edwards\n#2009 NASCAR Nationwide Series winner → Kyle Busch\n"
                      "#Closest competitor to the winner → Carl Edwards (210 points behind)\n"
                      "#Driver who lost to the winner → Carl Edwards", "Carl Edwards"),
                think("#backflips → Carl Edwards\n#closest competitor → Carl Edwards", "Carl Edwards"),
            ],
            "answers": [
                improved("#Driver known for backflips → Carl Edwards #2009 winner → Carl Edwards", "Carl Edwards"),
                improved("#Driver who lost to Kyle Busch → Carl Edwards", "Carl Edwards"),
                improved("#Driver who lost → not stated in context", "not mentioned"),
            ],
        },
        {
            "slots": [2, 5],
            "traces": [
                think("#Context mentions Carl Edwards is famous for backflips\n"
                      "#Question asks who the backflip driver lost to in 2009\n"
                      "#Carl Edwards did not win the championship in 2009", "Carl Edwards"),
                think("#Edwards famous for backflips\n#Edwards not 2009 champion", "Carl Edwards"),
            ],
            "answers": [
                improved("#Driver known for backflips off car → Edwards #Edwards lost to → Kyle Busch", "Kyle Busch"),
                improved("#backflip driver → unclear", "not mentioned"),
                improved("#Edwards' competition in 2009 NASCAR Nationwide Series → Kyle Busch", "Kyle Busch"),
            ],
        },
        {
            "slots": [7],
            "traces": [
                think("#Driver doing backflips → Carl Edwards\n#2009 NASCAR Nationwide Series → won by Kyle Busch\n"
                      "#Driver who lost → not mentioned", "not mentioned"),
            ],
            "answers": [
                improved("#Driver who lost → not mentioned", "not mentioned"),
                improved("#Kyle Busch finished 318 points ahead of Brad Keselowski "
                         "#Driver who lost to the champion → Brad Keselowski", "Brad Keselowski"),
                improved("#Driver ranked 3rd → Brad Keselowski", "Brad Keselowski"),
            ],
        },
    ]
    build_case("hotpotqa", record, demos, demo_vectors, clusters, refused=[8], paradigm=Paradigm.CC)


if __name__ == "__main__":
    commonsense_case()
    hotpot_case()
    print(f"fixtures written under {ROOT}")
