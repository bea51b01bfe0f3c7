"""Completion and embedding backends.

Three interchangeable implementations of each capability:

* ``Remote*``  - OpenAI-compatible HTTP endpoints (chat completions, embeddings)
* ``Replay*``  - exact-lookup JSON Lines fixtures; a missing key raises FixtureMiss
* ``Mock*``    - deterministic functions of the request, optionally scripted

Replay and mock backends do no I/O after construction.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence, TypeVar

import httpx
import numpy as np

from .errors import EmptyInput, FixtureMiss, ParseError, RemoteError, SafetyRefusal

log = logging.getLogger(__name__)

DEFAULT_TOP_P = 0.9
DEFAULT_MAX_TOKENS = 500
API_KEY_ENV = "ACPS_API_KEY"


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


prompt_digest = sha256_hex


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    temperature: float = 0.0
    top_p: float = DEFAULT_TOP_P
    max_tokens: int = DEFAULT_MAX_TOKENS
    sample_index: int = 0

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p {self.top_p} outside (0, 1]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.sample_index < 0:
            raise ValueError("sample_index must be >= 0")

    @property
    def digest(self) -> str:
        return sha256_hex(self.prompt)


@dataclass(frozen=True)
class CompletionResult:
    text: str
    completion_tokens: int | None = None
    prompt_tokens: int | None = None
    backend_id: str = ""


class CompletionBackend(Protocol):
    backend_id: str

    def complete(self, request: CompletionRequest) -> CompletionResult: ...


class EmbeddingBackend(Protocol):
    backend_id: str

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


def _check_texts(texts: Sequence[str]) -> None:
    if not texts:
        raise EmptyInput("embed() needs at least one text")
    if any(not t for t in texts):
        raise EmptyInput("embed() texts must be nonempty")


def _temp_key(t: float) -> float:
    return round(float(t), 6)


# --- mock -------------------------------------------------------------------

_CHOICES_BLOCK = re.compile(r"^Choices:\n((?:[A-Z]: .*\n?)+)", re.MULTILINE)
_WORD = re.compile(r"[A-Za-z][A-Za-z_]{2,}")


def _seeded_rng(*parts: object) -> random.Random:
    digest = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def default_mock_reply(request: CompletionRequest, seed: int = 0) -> str:
    """A plausible sketch completion, fully determined by the request and seed.

    Lower temperatures favour the first candidate answer so sweeps show
    realistic agreement at the cold end and spread at the hot end.
    """
    rng = _seeded_rng(seed, request.digest, f"{request.temperature:.6f}", request.sample_index)
    blocks = _CHOICES_BLOCK.findall(request.prompt)
    letters = [line[0] for line in blocks[-1].splitlines() if line] if blocks else []
    candidates = letters or ["yes", "no", "unknown"]
    if rng.random() < 1.0 - request.temperature / 2.5:
        answer = candidates[0]
    else:
        answer = rng.choice(candidates)
    words = _WORD.findall(request.prompt[-400:]) or ["premise", "inference", "answer"]
    hops = rng.randint(1, 3)
    chain = " → ".join("#" + rng.choice(words).lower() for _ in range(hops + 1))
    if "<improved_rs>" in request.prompt:
        return f"<improved_rs> {chain} </improved_rs> \\boxed{{{answer}}}"
    return f"<think>\n{chain}\n</think>\n\\boxed{{{answer}}}"


class MockBackend:
    """Deterministic completion backend; ``responder`` scripts replies when given."""

    def __init__(
        self,
        responder: Callable[[CompletionRequest], str | CompletionResult] | None = None,
        seed: int = 0,
        report_usage: bool = True,
    ):
        self.responder = responder
        self.seed = seed
        self.report_usage = report_usage
        self.backend_id = f"mock:seed={seed}" + (":scripted" if responder else "")

    def complete(self, request: CompletionRequest) -> CompletionResult:
        if self.responder is not None:
            reply = self.responder(request)
        else:
            reply = default_mock_reply(request, self.seed)
        if isinstance(reply, CompletionResult):
            return reply
        tokens = len(reply.split()) if self.report_usage else None
        prompt_tokens = len(request.prompt.split()) if self.report_usage else None
        return CompletionResult(reply, tokens, prompt_tokens, self.backend_id)


class MockEmbedder:
    """Seeded hash of the text content -> fixed-dimension Gaussian vector."""

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self.backend_id = f"mock-embed:dim={dim}:seed={seed}"

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        _check_texts(texts)
        out = []
        for t in texts:
            digest = hashlib.sha256(f"{self.seed}|{t}".encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
            out.append(rng.standard_normal(self.dim))
        return out


# --- replay -----------------------------------------------------------------


def _read_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
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
            yield lineno, obj


class ReplayBackend:
    """Exact-lookup completions keyed by (prompt sha256, temperature, sample_index).

    A fixture entry may carry ``"refusal": true`` to reproduce a provider
    safety refusal; looking it up raises SafetyRefusal.
    """

    def __init__(self, entries: dict[tuple[str, float, int], CompletionResult], refusals=(), source=""):
        self.entries = dict(entries)
        self.refusals = set(refusals)
        self.backend_id = f"replay:{source}" if source else "replay"

    @classmethod
    def from_jsonl(cls, path: str | os.PathLike) -> "ReplayBackend":
        path = Path(path)
        entries: dict[tuple[str, float, int], CompletionResult] = {}
        refusals = set()
        for lineno, obj in _read_jsonl(path):
            try:
                digest = obj["prompt_sha256"]
                key = (digest, _temp_key(obj["temperature"]), int(obj["sample_index"]))
            except KeyError as exc:
                raise ParseError(f"missing field {exc.args[0]!r}", lineno) from None
            if not re.fullmatch(r"[0-9a-f]{64}", digest):
                raise ParseError("prompt_sha256 must be 64 lowercase hex chars", lineno)
            if obj.get("refusal"):
                refusals.add(key)
                continue
            entries[key] = CompletionResult(
                text=obj.get("text", ""),
                completion_tokens=obj.get("completion_tokens"),
                prompt_tokens=obj.get("prompt_tokens"),
                backend_id=f"replay:{path.name}",
            )
        return cls(entries, refusals, source=path.name)

    def complete(self, request: CompletionRequest) -> CompletionResult:
        key = (request.digest, _temp_key(request.temperature), request.sample_index)
        if key in self.refusals:
            raise SafetyRefusal(f"fixture refusal at {key}")
        try:
            return self.entries[key]
        except KeyError:
            raise FixtureMiss(key) from None


class ReplayEmbedder:
    """Embedding fixtures: JSON Lines of ``{"text_sha256": ..., "vector": [...]}``."""

    def __init__(self, vectors: dict[str, np.ndarray], source: str = ""):
        self.vectors = vectors
        self.backend_id = f"replay-embed:{source}" if source else "replay-embed"

    @classmethod
    def from_jsonl(cls, path: str | os.PathLike) -> "ReplayEmbedder":
        path = Path(path)
        vectors = {}
        for lineno, obj in _read_jsonl(path):
            try:
                vectors[obj["text_sha256"]] = np.asarray(obj["vector"], dtype=float)
            except KeyError as exc:
                raise ParseError(f"missing field {exc.args[0]!r}", lineno) from None
        return cls(vectors, source=path.name)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        _check_texts(texts)
        out = []
        for t in texts:
            key = sha256_hex(t)
            if key not in self.vectors:
                raise FixtureMiss((key,))
            out.append(self.vectors[key].copy())
        return out


# --- remote -----------------------------------------------------------------

_RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}


class _RemoteBase:
    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        client: httpx.Client | None = None,
        max_attempts: int = 3,
        backoff_base: float = 0.5,
        timeout: float = 60.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.client = client or httpx.Client(timeout=timeout)
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.sleep = sleep

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _post(self, path: str, payload: dict) -> dict:
        url = f"{self.base_url}{path}"
        status, body = None, ""
        for attempt in range(self.max_attempts):
            if attempt:
                self.sleep(self.backoff_base * 2 ** (attempt - 1))
            try:
                resp = self.client.post(url, json=payload, headers=self._headers())
            except httpx.TransportError as exc:
                status, body = None, str(exc)
                log.warning("transport error on %s (attempt %d): %s", url, attempt + 1, exc)
                continue
            if resp.status_code == 200:
                return resp.json()
            status, body = resp.status_code, resp.text
            if _is_content_filter(body):
                raise SafetyRefusal(body[:500])
            if status not in _RETRYABLE_STATUS:
                break
            log.warning("status %s on %s (attempt %d)", status, url, attempt + 1)
        raise RemoteError(status, body)


def _is_content_filter(body: str) -> bool:
    return "content_filter" in body or "content_management_policy" in body


class RemoteBackend(_RemoteBase):
    """OpenAI-compatible ``/chat/completions`` client with bounded retry."""

    @property
    def backend_id(self) -> str:
        return f"remote:{self.base_url}:{self.model}"

    def complete(self, request: CompletionRequest) -> CompletionResult:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
            "n": 1,
        }
        data = self._post("/chat/completions", payload)
        try:
            choice = data["choices"][0]
        except (KeyError, IndexError, TypeError):
            raise RemoteError(200, json.dumps(data)[:500]) from None
        if choice.get("finish_reason") == "content_filter":
            raise SafetyRefusal("completion stopped by content filter")
        text = (choice.get("message") or {}).get("content") or ""
        usage = data.get("usage") or {}
        return CompletionResult(
            text=text,
            completion_tokens=usage.get("completion_tokens"),
            prompt_tokens=usage.get("prompt_tokens"),
            backend_id=self.backend_id,
        )


class RemoteEmbedder(_RemoteBase):
    """OpenAI-compatible ``/embeddings`` client."""

    @property
    def backend_id(self) -> str:
        return f"remote-embed:{self.base_url}:{self.model}"

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        _check_texts(texts)
        data = self._post("/embeddings", {"model": self.model, "input": list(texts)})
        items = sorted(data.get("data", []), key=lambda d: d.get("index", 0))
        if len(items) != len(texts):
            raise RemoteError(200, f"expected {len(texts)} embeddings, got {len(items)}")
        return [np.asarray(d["embedding"], dtype=float) for d in items]


# --- fan-out ----------------------------------------------------------------

T = TypeVar("T")
R = TypeVar("R")


def map_bounded(fn: Callable[[T], R], items: Sequence[T], parallelism: int = 1) -> list[R | BaseException]:
    """Apply ``fn`` to every item with at most ``parallelism`` in flight.

    Results come back in input order regardless of completion order; an
    exception raised for one item is returned in its slot instead of raised.
    """

    def guarded(item):
        try:
            return fn(item)
        except Exception as exc:  # noqa: BLE001 - caller decides per slot
            return exc

    if parallelism <= 1 or len(items) <= 1:
        return [guarded(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(parallelism, len(items))) as pool:
        return list(pool.map(guarded, items))
