"""Prompt templates: per-paradigm sketch prompts and the shared intervention prompt.

Templates are plain format strings so a prompt is a pure function of its
inputs; replay fixtures key on the sha256 of the rendered text, so any edit
here invalidates recorded fixtures.
"""

from __future__ import annotations

from typing import Mapping, Sequence

from .router import Paradigm

THINK_FORMAT = (
    "<think>\n"
    "Let's think through this step by step\n"
    "{body}\n"
    "</think>\n"
    "\\boxed{{[Final answer]}}"
)

_CS_INSTRUCTION = """You reason with Chunked Symbolism: numbers become named variables, every step is one explicit equation, and words are kept to a minimum.

Rules:
- Define each variable before it is used.
- One computation per line; carry units along.
- Do not restate the problem.
- For multiple-choice questions, put the option letter in the box.

Output format:
""" + THINK_FORMAT.format(body="[variables, equations, one computation per line]")

_CC_INSTRUCTION = """You reason with Conceptual Chaining: pull out the key concepts and link them in short chains, using arrows (→) for each dependency.

Rules:
- Keywords only, no full sentences.
- Each link must follow from the previous one.
- Do not restate the question.
- For multiple-choice questions, put the option letter in the box; for true/false claims, put True or False in the box.

Output format:
""" + THINK_FORMAT.format(body="[#concept → #concept → #concept]")

_EL_INSTRUCTION = """You reason with Expert Lexicons: compress the reasoning into domain shorthand (technical terms, symbols, abbreviations) that an expert would read at a glance.

Rules:
- Prefer standard notation and abbreviations over prose.
- Keep each line to one fact or inference, linked with arrows (→) where one follows from another.
- For multiple-choice questions, put the option letter in the box; for true/false claims, put True or False in the box.

Output format:
""" + THINK_FORMAT.format(body="[shorthand facts and inferences]")

SKETCH_INSTRUCTIONS: dict[Paradigm, str] = {
    Paradigm.CS: _CS_INSTRUCTION,
    Paradigm.CC: _CC_INSTRUCTION,
    Paradigm.EL: _EL_INSTRUCTION,
}

TASK_TYPES: dict[Paradigm, str] = {
    Paradigm.CS: "mathematical and symbolic reasoning",
    Paradigm.CC: "multi-step conceptual reasoning",
    Paradigm.EL: "knowledge-intensive inference and fact verification",
}


def question_block(
    question: str,
    evidence: Sequence[str] = (),
    choices: Mapping[str, str] | None = None,
) -> str:
    if evidence:
        line = f"Q: The context is: {' '.join(evidence)} The question is: {question}"
    else:
        line = f"Q: The question is: {question}"
    if choices:
        opts = "\n".join(f"{k}: {v}" for k, v in choices.items())
        line = f"{line}\nChoices:\n{opts}"
    return line


def sketch_prompt(
    paradigm: Paradigm,
    question: str,
    evidence: Sequence[str] = (),
    choices: Mapping[str, str] | None = None,
) -> str:
    return (
        f"{SKETCH_INSTRUCTIONS[Paradigm(paradigm)]}\n\n"
        "Test example:\n"
        f"{question_block(question, evidence, choices)}\n"
        "Let us think step by step.\n"
        "A:"
    )


INTERVENTION_HEADER = (
    "You are a helpful assistant performing {task_type}. Use the context to answer the "
    "question step by step and give the final answer at the end. Each example comes with "
    "a reasoning process; improve it so that it reaches the correct answer.\n"
    "Write the improved reasoning between <improved_rs> and </improved_rs>, then give the "
    "final answer as \\boxed{{answer}}."
)


def demo_block(question: str, evidence: Sequence[str], wrong_trace: str, correct_trace: str, answer: str) -> str:
    return (
        "Demonstration:\n"
        f"{question_block(question, evidence)}\n"
        "Let us think step by step,\n"
        f"The provided reasoning process is: {wrong_trace}\n"
        f"A: The improved reasoning process is: {correct_trace}\n"
        f"Therefore, the correct answer is: {answer}"
    )


def target_block(
    question: str,
    evidence: Sequence[str],
    choices: Mapping[str, str] | None,
    representative_trace: str,
) -> str:
    return (
        "Test example:\n"
        f"{question_block(question, evidence, choices)}\n"
        "Let us think step by step,\n"
        f"The provided reasoning process is: {representative_trace}\n"
        "A: The improved reasoning process is:"
    )


def intervention_prompt(paradigm: Paradigm, demo_blocks: Sequence[str], target: str) -> str:
    header = INTERVENTION_HEADER.format(task_type=TASK_TYPES[Paradigm(paradigm)])
    return "\n\n".join([header, *demo_blocks, target])
