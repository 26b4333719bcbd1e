"""Two-stage memory retrieval: cosine prefilter, then model relevance pick.

Stage one scores every bank entry against the conversation with a cheap
deterministic embedding (character 3-gram feature hashing by default) and
keeps the top m. Stage two asks the model to pick the q most relevant of
those, sorted by relevance; anything the model names outside the candidate
list is discarded.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass

import numpy as np
import requests

from .dialogue import Utterance
from .errors import DimensionMismatch, LlmUnavailable, ParseFailure
from .llm import LanguageModelPort, OutputKind, complete
from .memory_bank import MemoryBank, default_templates
from .prompts import PromptTemplate, TemplateName, render
from .textnorm import canonical_entity

log = logging.getLogger(__name__)

_WS = re.compile(r"\s+")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _U64
    return h


class Embedder:
    dimension: int

    def embed(self, text: str) -> np.ndarray:
        raise NotImplementedError


class HashNgramEmbedder(Embedder):
    """Character 3-gram feature hashing, L2-normalized.

    Fully deterministic across runs and platforms (fixed FNV-1a hash, no
    model weights), which keeps CI independent of any embedding service.
    Empty text maps to the zero vector.
    """

    def __init__(self, dimension: int = 256, n: int = 3):
        self.dimension = dimension
        self.n = n

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        text = _WS.sub(" ", text.casefold()).strip()
        if not text:
            return vec
        if len(text) < self.n:
            grams = [text]
        else:
            grams = [text[i : i + self.n] for i in range(len(text) - self.n + 1)]
        for gram in grams:
            vec[_fnv1a(gram.encode("utf-8")) % self.dimension] += 1.0
        norm = float(np.linalg.norm(vec))
        return vec / norm if norm > 0 else vec


class HttpEmbedder(Embedder):
    """OpenAI-compatible /embeddings endpoint."""

    def __init__(self, endpoint: str, model: str, dimension: int = 1536, timeout: float = 30.0):
        self.endpoint = endpoint
        self.model = model
        self.dimension = dimension
        self.timeout = timeout

    def embed(self, text: str) -> np.ndarray:
        url = self.endpoint.rstrip("/") + "/embeddings"
        try:
            resp = requests.post(
                url, json={"model": self.model, "input": [text]}, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise LlmUnavailable(str(exc)) from exc
        if resp.status_code != 200:
            raise LlmUnavailable(f"{url} returned {resp.status_code}")
        vec = np.asarray(resp.json()["data"][0]["embedding"], dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        return vec / norm if norm > 0 else vec


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0.0 when either vector has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(b.shape[0] if b.ndim else 0, a.shape[0] if a.ndim else 0)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


@dataclass(frozen=True)
class RetrievalConfig:
    prefilter_m: int = 20
    q: int = 3  # entities handed to the recommender
    skip_prefilter_below: int = 30  # small banks go straight to the model stage

    def __post_init__(self):
        if self.prefilter_m < 1 or self.q < 1 or self.skip_prefilter_below < 0:
            raise ValueError("retrieval counts must be positive")
        if self.q > self.prefilter_m:
            raise ValueError("q must not exceed prefilter_m")


@dataclass(frozen=True)
class RetrievedMemory:
    entities: tuple[str, ...]
    attitudes: tuple[str, ...]
    prefilter_scores: tuple[tuple[str, float], ...] = ()
    degraded: bool = False  # model stage failed; cosine ranking used as-is

    @staticmethod
    def empty() -> "RetrievedMemory":
        return RetrievedMemory(entities=(), attitudes=())


def context_text(context: list[Utterance] | tuple[Utterance, ...]) -> str:
    return "\n".join(f"{u.speaker.value}: {u.text}" for u in context)


def prefilter(
    bank: MemoryBank,
    conversation_context: str,
    embedder: Embedder,
    m: int,
    skip_below: int = 0,
) -> list[tuple[str, float]]:
    """Top-m bank entities by cosine(entry text, context), ties lexicographic.

    Banks at or below skip_below entries skip the scoring entirely and return
    every entity with a sentinel score of 1.0.
    """
    if not bank.entries:
        return []
    if len(bank.entries) <= skip_below:
        return [(key, 1.0) for key in bank.entries]
    ctx_vec = embedder.embed(conversation_context)
    scored = []
    for key, entry in bank.entries.items():
        vec = embedder.embed(f"{entry.entity} {entry.attitude}")
        scored.append((key, cosine(vec, ctx_vec)))
    scored.sort(key=lambda kv: (-kv[1], kv[0]))
    return scored[:m]


def retrieve(
    bank: MemoryBank,
    context: list[Utterance] | tuple[Utterance, ...],
    llm: LanguageModelPort,
    embedder: Embedder,
    cfg: RetrievalConfig,
    templates: dict[TemplateName, PromptTemplate] | None = None,
    retry_budget: int = 1,
) -> RetrievedMemory:
    """Two-stage retrieval over a user's bank for the current conversation.

    Returned entities are always a subset of the stage-one candidates no
    matter what the model emits, and reading their attitudes refreshes the
    bank timestamps.
    """
    if not context:
        raise ValueError("context must be non-empty")
    if not bank.entries:
        return RetrievedMemory.empty()
    templates = templates or default_templates()
    conversation = context_text(context)
    candidates = prefilter(bank, conversation, embedder, cfg.prefilter_m, cfg.skip_prefilter_below)
    candidate_keys = [key for key, _ in candidates]

    prompt = render(
        templates[TemplateName.RETRIEVE],
        {
            "q": cfg.q,
            "candidates": json.dumps(candidate_keys, ensure_ascii=False),
            "conversation": conversation,
        },
    )
    degraded = False
    try:
        out = complete(llm, prompt, OutputKind.ENTITY_LIST, retry_budget)
        allowed = set(candidate_keys)
        selected = []
        for raw_entity in out.payload:
            key = canonical_entity(raw_entity)
            if key in allowed and key not in selected:
                selected.append(key)
        selected = selected[: cfg.q]
    except ParseFailure:
        selected = candidate_keys[: cfg.q]
        degraded = True
        log.warning("retrieval degraded for user %s: falling back to cosine ranking", bank.user_id)

    pairs = bank.read_attitudes(selected)
    return RetrievedMemory(
        entities=tuple(e for e, _ in pairs),
        attitudes=tuple(a for _, a in pairs),
        prefilter_scores=tuple(candidates),
        degraded=degraded,
    )
