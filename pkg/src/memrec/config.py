"""Flat key-value configuration and port construction.

Config files are plain ``section.key = value`` lines; every key has a
working default so the whole offline pipeline runs with no file at all
(mock model, hash embedder, co-visit expert).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .general_memory import DEFAULT_CANDIDATE_COUNT, ExpertModelPort, ExternalExpert
from .llm import HttpLlm, LanguageModelPort, MockLlm
from .prompts import load_templates
from .recommender import DEFAULT_LIST_LENGTH, PipelineConfig, Ports
from .retrieval import Embedder, HashNgramEmbedder, HttpEmbedder, RetrievalConfig

log = logging.getLogger(__name__)


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {line_no}: expected key = value")
        key, _, value = stripped.partition("=")
        values[key.strip()] = value.strip()
    return values


def read_config(path: str | Path | None) -> dict[str, str]:
    if path is None:
        return {}
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def _get_bool(cfg: dict[str, str], key: str, default: bool) -> bool:
    raw = cfg.get(key)
    if raw is None:
        return default
    return raw.lower() in ("1", "true", "yes", "on")


def _get_int(cfg: dict[str, str], key: str, default: int) -> int:
    raw = cfg.get(key)
    return int(raw) if raw is not None else default


@dataclass
class AppConfig:
    """Typed view over the flat config mapping."""

    raw: dict[str, str] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path | None) -> "AppConfig":
        return cls(raw=read_config(path))

    # -- ports ---------------------------------------------------------------

    def make_llm(self) -> LanguageModelPort:
        kind = self.raw.get("llm.kind", "mock")
        if kind == "mock":
            return MockLlm(seed=_get_int(self.raw, "harness.seed", 0))
        if kind == "http":
            return HttpLlm(
                endpoint=self.raw.get("llm.endpoint", "http://127.0.0.1:8000/v1"),
                model=self.raw.get("llm.model", "default"),
                api_key_env=self.raw.get("llm.api_key_env", "MEMREC_LLM_API_KEY"),
                max_in_flight=_get_int(self.raw, "llm.max_in_flight", 4),
            )
        raise ValueError(f"unknown llm.kind {kind!r}")

    def make_embedder(self) -> Embedder:
        kind = self.raw.get("embedder.kind", "hash")
        if kind == "hash":
            return HashNgramEmbedder(dimension=_get_int(self.raw, "embedder.dimension", 256))
        if kind == "http":
            return HttpEmbedder(
                endpoint=self.raw.get("embedder.endpoint", "http://127.0.0.1:8000/v1"),
                model=self.raw.get("embedder.model", "default"),
                dimension=_get_int(self.raw, "embedder.dimension", 1536),
            )
        raise ValueError(f"unknown embedder.kind {kind!r}")

    def make_expert(self) -> ExpertModelPort | None:
        """External expert when configured, else None (train co-visit later)."""
        kind = self.raw.get("expert.kind", "covisit")
        if kind == "covisit":
            return None
        if kind == "external":
            return ExternalExpert(
                self.raw["expert.candidates_file"],
                candidate_count=self.candidate_count,
            )
        raise ValueError(f"unknown expert.kind {kind!r}")

    def make_ports(self) -> Ports:
        templates_path = self.raw.get("templates.path")
        return Ports(
            llm=self.make_llm(),
            embedder=self.make_embedder(),
            templates=load_templates(templates_path) if templates_path else None,
        )

    # -- tuning --------------------------------------------------------------

    @property
    def retrieval(self) -> RetrievalConfig:
        return RetrievalConfig(
            prefilter_m=_get_int(self.raw, "retrieval.prefilter_m", 20),
            q=_get_int(self.raw, "retrieval.q", 3),
            skip_prefilter_below=_get_int(self.raw, "retrieval.skip_prefilter_below", 30),
        )

    @property
    def candidate_count(self) -> int:
        return _get_int(self.raw, "expert.candidate_count", DEFAULT_CANDIDATE_COUNT)

    @property
    def list_length(self) -> int:
        return _get_int(self.raw, "rec.list_length", DEFAULT_LIST_LENGTH)

    @property
    def reflect_every(self) -> int:
        return _get_int(self.raw, "harness.reflect_every", 10)

    @property
    def seed(self) -> int:
        return _get_int(self.raw, "harness.seed", 0)

    @property
    def per_user_average(self) -> bool:
        return _get_bool(self.raw, "harness.per_user_average", False)

    @property
    def retry_budget(self) -> int:
        return _get_int(self.raw, "llm.retry_budget", 1)

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            retrieval=self.retrieval,
            list_length=self.list_length,
            retry_budget=self.retry_budget,
            seed=self.seed,
        )

    # -- service -------------------------------------------------------------

    @property
    def bind(self) -> tuple[str, int]:
        raw = self.raw.get("service.bind", "127.0.0.1:8040")
        host, _, port = raw.rpartition(":")
        return host or "127.0.0.1", int(port)

    @property
    def store_root(self) -> Path:
        return Path(self.raw.get("service.store_root", "./memstore"))

    @property
    def service_corpus(self) -> Path | None:
        raw = self.raw.get("service.corpus")
        return Path(raw) if raw else None

    @property
    def cors_origins(self) -> list[str]:
        raw = self.raw.get("service.cors_origins", "")
        return [o.strip() for o in raw.split(",") if o.strip()]
