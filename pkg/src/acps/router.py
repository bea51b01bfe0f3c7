"""Paradigm routing and adjustment-mode selection."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Mapping

import httpx

from .errors import EmptyLogits, NonFiniteLogit

log = logging.getLogger(__name__)


class Paradigm(str, Enum):
    CC = "CC"  # conceptual chaining
    CS = "CS"  # chunked symbolism
    EL = "EL"  # expert lexicons


# argmax ties resolve to the earliest paradigm in this order
PARADIGM_ORDER = (Paradigm.CC, Paradigm.CS, Paradigm.EL)


class AdjustmentKind(str, Enum):
    STANDARD = "standard_front_door"
    CONDITIONAL = "conditional_front_door"


@dataclass(frozen=True)
class ParadigmDecision:
    chosen: Paradigm
    probabilities: dict[Paradigm, float]
    source: str  # remote | heuristic | fixed | fallback
    logits: dict[Paradigm, float] | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "chosen": self.chosen.value,
            "probabilities": {p.value: v for p, v in self.probabilities.items()},
            "logits": None if self.logits is None else {p.value: v for p, v in self.logits.items()},
            "source": self.source,
            "detail": self.detail,
        }


def softmax(logits: Mapping[Paradigm | str, float]) -> dict[Paradigm, float]:
    if not logits:
        raise EmptyLogits("softmax of an empty logit map")
    vals = {Paradigm(k): float(v) for k, v in logits.items()}
    if not all(math.isfinite(v) for v in vals.values()):
        raise NonFiniteLogit(f"non-finite logit in {vals}")
    top = max(vals.values())
    exps = {k: math.exp(v - top) for k, v in vals.items()}
    total = math.fsum(exps.values())
    return {k: e / total for k, e in exps.items()}


def argmax_paradigm(probs: Mapping[Paradigm, float]) -> Paradigm:
    best = None
    for p in PARADIGM_ORDER:
        if p in probs and (best is None or probs[p] > probs[best]):
            best = p
    return best


def _one_hot(p: Paradigm) -> dict[Paradigm, float]:
    return {q: (1.0 if q is p else 0.0) for q in PARADIGM_ORDER}


def select_adjustment(paradigm: Paradigm | str, has_external_knowledge: bool) -> AdjustmentKind:
    paradigm = Paradigm(paradigm)
    if paradigm is Paradigm.CS or not has_external_knowledge:
        if paradigm is Paradigm.CC:
            log.info("CC query without external knowledge; degrading to standard front-door")
        return AdjustmentKind.STANDARD
    return AdjustmentKind.CONDITIONAL


# --- routers -------------------------------------------------------------------


class FixedRouter:
    def __init__(self, paradigm: Paradigm | str):
        self.paradigm = Paradigm(paradigm)
        self.backend_id = f"fixed:{self.paradigm.value}"

    def classify(self, question: str) -> ParadigmDecision:
        return ParadigmDecision(self.paradigm, _one_hot(self.paradigm), "fixed")


def load_rules(path=None) -> list[tuple[re.Pattern, Paradigm, str]]:
    if path is None:
        text = resources.files("acps").joinpath("data", "router_rules.json").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    table = json.loads(text)
    return [
        (re.compile(r["pattern"], re.IGNORECASE), Paradigm(r["paradigm"]), r.get("cue", ""))
        for r in table["rules"]
    ]


class HeuristicRouter:
    """First matching rule from the ordered table wins."""

    def __init__(self, fallback: Paradigm | str = Paradigm.CS, rules_path=None):
        self.fallback = Paradigm(fallback)
        self.rules = load_rules(rules_path)
        self.backend_id = "heuristic"

    def classify(self, question: str) -> ParadigmDecision:
        if not question.strip():
            raise ValueError("question must be nonempty")
        for pattern, paradigm, cue in self.rules:
            if pattern.search(question):
                return ParadigmDecision(paradigm, _one_hot(paradigm), "heuristic", detail=cue)
        return ParadigmDecision(self.fallback, _one_hot(self.fallback), "heuristic", detail="no rule matched")


class RemoteRouter:
    """Classifier endpoint: POST {"question"} -> {"logits": {"CC", "CS", "EL"}}.

    Any failure degrades to the configured fallback paradigm.
    """

    def __init__(self, url: str, fallback: Paradigm | str = Paradigm.CS,
                 client: httpx.Client | None = None, timeout: float = 30.0):
        self.url = url
        self.fallback = Paradigm(fallback)
        self.client = client or httpx.Client(timeout=timeout)
        self.backend_id = f"remote-router:{url}"

    def classify(self, question: str) -> ParadigmDecision:
        if not question.strip():
            raise ValueError("question must be nonempty")
        try:
            resp = self.client.post(self.url, json={"question": question})
            resp.raise_for_status()
            logits = {Paradigm(k): float(v) for k, v in resp.json()["logits"].items()}
            probs = softmax(logits)
        except Exception as exc:  # noqa: BLE001 - any failure means fallback
            log.warning("router endpoint failed (%s); using fallback %s", exc, self.fallback.value)
            return ParadigmDecision(self.fallback, _one_hot(self.fallback), "fallback", detail=str(exc)[:200])
        # argmax on logits: same winner as on probabilities, but immune to exp() collapsing near-equal values
        return ParadigmDecision(argmax_paradigm(logits), probs, "remote", logits=logits)
