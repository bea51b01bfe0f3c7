"""Run configuration: a single JSON file with backend, pipeline, router and paths sections.

Every field has a default; the pipeline defaults are M=9 temperatures
(0.0 to 2.0 step 0.25), K=4, S=3, L=2, top_p=0.9, max_tokens=500.
Relative paths resolve against the directory of the config file.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .router import Paradigm
from .traces import DEFAULT_SCHEDULE, TemperatureSchedule

BACKEND_KINDS = ("remote", "replay", "mock")
ROUTER_KINDS = ("remote", "heuristic", "fixed")


@dataclass
class BackendConfig:
    kind: str = "mock"
    base_url: str | None = None
    model: str | None = None
    fixture_path: str | None = None
    embedding_kind: str | None = None  # defaults to ``kind``
    embedding_base_url: str | None = None
    embedding_model: str | None = None
    embedding_fixture_path: str | None = None
    embedding_dim: int = 64
    mock_seed: int = 0
    max_attempts: int = 3
    backoff_base: float = 0.5
    timeout: float = 60.0

    @property
    def effective_embedding_kind(self) -> str:
        return self.embedding_kind or self.kind


@dataclass
class PipelineConfig:
    temperatures: list[float] = field(default_factory=lambda: list(DEFAULT_SCHEDULE.values))
    K: int = 4
    S: int = 3
    L: int = 2
    answer_temperature: float = 0.7
    max_tokens: int = 500
    top_p: float = 0.9
    parallelism: int = 4
    seed: int = 0
    evidence_weights: list[float] | None = None

    @property
    def schedule(self) -> TemperatureSchedule:
        return TemperatureSchedule(tuple(self.temperatures))


@dataclass
class RouterConfig:
    kind: str = "heuristic"
    url: str | None = None
    fallback: str = "CS"
    fixed: str | None = None
    rules_path: str | None = None


@dataclass
class PathsConfig:
    dataset: str | None = None
    demos: str | None = None
    distractors: str | None = None
    output_dir: str = "runs/latest"


@dataclass
class RunConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    router: RouterConfig = field(default_factory=RouterConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self) -> "RunConfig":
        b, p, r = self.backend, self.pipeline, self.router
        if b.kind not in BACKEND_KINDS:
            raise ConfigError(f"backend.kind must be one of {BACKEND_KINDS}, got {b.kind!r}")
        if b.effective_embedding_kind not in BACKEND_KINDS:
            raise ConfigError(f"backend.embedding_kind must be one of {BACKEND_KINDS}")
        if b.kind == "replay" and not b.fixture_path:
            raise ConfigError("backend.kind=replay requires backend.fixture_path")
        if b.effective_embedding_kind == "replay" and not b.embedding_fixture_path:
            raise ConfigError("replay embeddings require backend.embedding_fixture_path")
        if b.kind == "remote" and not (b.base_url and b.model):
            raise ConfigError("backend.kind=remote requires base_url and model")
        if b.effective_embedding_kind == "remote" and not ((b.embedding_base_url or b.base_url) and b.embedding_model):
            raise ConfigError("remote embeddings require embedding_model and a base URL")
        for name in ("K", "S", "L"):
            if getattr(p, name) < 1:
                raise ConfigError(f"pipeline.{name} must be >= 1")
        try:
            p.schedule
        except ValueError as exc:
            raise ConfigError(f"pipeline.temperatures: {exc}") from None
        if not 0.0 <= p.answer_temperature <= 2.0:
            raise ConfigError("pipeline.answer_temperature must lie in [0, 2]")
        if not 0.0 < p.top_p <= 1.0:
            raise ConfigError("pipeline.top_p must lie in (0, 1]")
        if p.max_tokens < 1 or p.parallelism < 1:
            raise ConfigError("pipeline.max_tokens and pipeline.parallelism must be >= 1")
        if r.kind not in ROUTER_KINDS:
            raise ConfigError(f"router.kind must be one of {ROUTER_KINDS}, got {r.kind!r}")
        try:
            Paradigm(r.fallback)
            if r.fixed is not None:
                Paradigm(r.fixed)
        except ValueError as exc:
            raise ConfigError(f"router: {exc}") from None
        if r.kind == "fixed" and r.fixed is None:
            raise ConfigError("router.kind=fixed requires router.fixed")
        if r.kind == "remote" and not r.url:
            raise ConfigError("router.kind=remote requires router.url")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "backend": BackendConfig,
    "pipeline": PipelineConfig,
    "router": RouterConfig,
    "paths": PathsConfig,
}
_PATH_FIELDS = {
    "backend": ("fixture_path", "embedding_fixture_path"),
    "router": ("rules_path",),
    "paths": ("dataset", "demos", "distractors", "output_dir"),
}


def config_from_dict(data: dict, base_dir: str | os.PathLike | None = None) -> RunConfig:
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTIONS.items():
        raw = dict(data.get(name) or {})
        allowed = {f.name for f in dataclasses.fields(cls)}
        extra = set(raw) - allowed
        if extra:
            raise ConfigError(f"unknown field(s) in {name}: {sorted(extra)}")
        if base_dir is not None:
            for key in _PATH_FIELDS.get(name, ()):
                if raw.get(key):
                    raw[key] = str((Path(base_dir) / raw[key]).resolve())
        sections[name] = cls(**raw)
    return RunConfig(**sections).validate()


def load_config(path: str | os.PathLike) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(data, Path(path).resolve().parent)
