"""Final integration: build the recommendation prompt and rank items.

The model sees five context blocks (conversation, retrieved entities and
attitudes, expert candidates, reasoning guidelines) and answers with item
titles. Titles are resolved against the catalog by exact match after
canonicalization; anything unresolvable is dropped, and short lists are
padded from the unused expert candidates.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass
from enum import Enum

from .dialogue import CatalogItem, EvaluationPoint, Utterance
from .errors import ParseFailure
from .general_memory import ExpertModelPort, GuidelineSet, expert_candidates
from .llm import REPLY_INSTRUCTION, LanguageModelPort, OutputKind, complete
from .memory_bank import MemoryBank, default_templates
from .prompts import PromptTemplate, TemplateName, render
from .retrieval import Embedder, RetrievalConfig, RetrievedMemory, context_text, prefilter, retrieve
from .textnorm import canonical_title
from .variants import MemoryMode, VariantSpec

log = logging.getLogger(__name__)

DEFAULT_LIST_LENGTH = 20
DEFAULT_REPLY = "Here are some recommendations you might like."


class Provenance(str, Enum):
    EXPERT_CANDIDATE = "expert"      # named by the model, present in expert list
    LLM_SUPPLEMENT = "supplement"    # named by the model from its own knowledge
    FALLBACK_PAD = "pad"             # filled in from unused expert candidates


@dataclass(frozen=True)
class RecommendationRequest:
    user_id: str
    context: tuple[Utterance, ...]
    retrieved: RetrievedMemory
    expert: tuple[str, ...]  # ranked catalog item ids
    guidelines: GuidelineSet | None
    list_length: int = DEFAULT_LIST_LENGTH

    def __post_init__(self):
        if self.list_length < 1:
            raise ValueError("list_length must be >= 1")
        if len(set(self.expert)) != len(self.expert):
            raise ValueError("expert candidates must be duplicate-free")


@dataclass(frozen=True)
class RecommendationResult:
    items: tuple[str, ...]  # ranked catalog item ids
    provenance: tuple[Provenance, ...]
    trajectory: str  # rendered prompt + raw completion, feeds reflection
    reply: str = ""
    degraded: bool = False  # model stage failed; expert list served as-is


def build_title_resolver(catalog: dict[str, CatalogItem]) -> dict[str, str]:
    """Canonical id/title text -> item id (ids win over colliding titles)."""
    resolver: dict[str, str] = {}
    for item_id in sorted(catalog):
        resolver.setdefault(canonical_title(item_id), item_id)
    for item_id in sorted(catalog):
        resolver.setdefault(canonical_title(catalog[item_id].title), item_id)
    return resolver


def recommend(
    req: RecommendationRequest,
    llm: LanguageModelPort,
    catalog: dict[str, CatalogItem],
    resolver: dict[str, str] | None = None,
    templates: dict[TemplateName, PromptTemplate] | None = None,
    retry_budget: int = 1,
    want_reply: bool = False,
) -> RecommendationResult:
    """Produce the final ranked item list for one conversation state."""
    if not req.context:
        raise ValueError("context must be non-empty")
    templates = templates or default_templates()
    resolver = resolver if resolver is not None else build_title_resolver(catalog)

    mentioned = {i for u in req.context for i in u.mentioned_items}
    expert_ids = [i for i in req.expert if i not in mentioned]
    expert_titles = [catalog[i].title if i in catalog else i for i in expert_ids]
    guidelines = list(req.guidelines.guidelines) if req.guidelines is not None else []

    prompt = render(
        templates[TemplateName.RECOMMEND],
        {
            "conversation": context_text(req.context),
            "entities": json.dumps(list(req.retrieved.entities), ensure_ascii=False),
            "attitudes": json.dumps(list(req.retrieved.attitudes), ensure_ascii=False),
            "expert_candidates": json.dumps(expert_titles, ensure_ascii=False),
            "guidelines": json.dumps(guidelines, ensure_ascii=False),
            "list_length": req.list_length,
        },
    )
    if want_reply:
        prompt = prompt + "\n" + REPLY_INSTRUCTION

    try:
        out = complete(llm, prompt, OutputKind.ITEM_LIST, retry_budget)
    except ParseFailure as exc:
        items = tuple(expert_ids[: req.list_length])
        log.warning("recommendation degraded for user %s: %s", req.user_id, exc)
        return RecommendationResult(
            items=items,
            provenance=tuple(Provenance.FALLBACK_PAD for _ in items),
            trajectory=prompt + "\n---\n<unparseable completion>",
            reply=DEFAULT_REPLY if want_reply else "",
            degraded=True,
        )

    expert_set = set(expert_ids)
    items: list[str] = []
    provenance: list[Provenance] = []
    for title in out.payload:
        item_id = resolver.get(canonical_title(title))
        if item_id is None or item_id in mentioned or item_id in items:
            continue
        items.append(item_id)
        provenance.append(
            Provenance.EXPERT_CANDIDATE if item_id in expert_set else Provenance.LLM_SUPPLEMENT
        )
        if len(items) == req.list_length:
            break
    if len(items) < req.list_length:
        for item_id in expert_ids:
            if item_id in items:
                continue
            items.append(item_id)
            provenance.append(Provenance.FALLBACK_PAD)
            if len(items) == req.list_length:
                break

    reply = ""
    if want_reply:
        reply = _reply_text(out.raw) or DEFAULT_REPLY
    return RecommendationResult(
        items=tuple(items),
        provenance=tuple(provenance),
        trajectory=prompt + "\n---\n" + out.raw,
        reply=reply,
    )


def _reply_text(raw: str) -> str:
    """Free text around the first JSON list, used as the conversational reply."""
    from .llm import first_json_value

    value = first_json_value(raw)
    if value is None:
        return raw.strip()
    idx = raw.find(value)
    return (raw[:idx] + raw[idx + len(value):]).strip()


# ---------------------------------------------------------------------------
# One evaluation point through the whole pipeline
# ---------------------------------------------------------------------------

@dataclass
class GeneralMemoryState:
    expert: ExpertModelPort
    guidelines: GuidelineSet


@dataclass
class Ports:
    llm: LanguageModelPort
    embedder: Embedder
    templates: dict[TemplateName, PromptTemplate] | None = None


@dataclass(frozen=True)
class PipelineConfig:
    retrieval: RetrievalConfig = RetrievalConfig()
    list_length: int = DEFAULT_LIST_LENGTH
    retry_budget: int = 1
    seed: int = 0


def _stable_rng(seed: int, key: tuple[str, str, int]) -> random.Random:
    digest = hashlib.sha256(f"{seed}|{key[0]}|{key[1]}|{key[2]}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def select_memory(
    variant: VariantSpec,
    bank: MemoryBank | None,
    context: tuple[Utterance, ...],
    ports: Ports,
    cfg: PipelineConfig,
    point_key: tuple[str, str, int],
) -> RetrievedMemory:
    """Memory entering the prompt, per the variant's utilization mode."""
    if variant.without_um or bank is None or len(bank) == 0:
        return RetrievedMemory.empty()
    q = cfg.retrieval.q
    if variant.memory_mode is MemoryMode.ALL:
        pairs = bank.read_attitudes(list(bank.entries.keys()))
    elif variant.memory_mode is MemoryMode.RAND:
        keys = sorted(bank.entries.keys())
        rng = _stable_rng(cfg.seed, point_key)
        pairs = bank.read_attitudes(rng.sample(keys, min(q, len(keys))))
    elif variant.memory_mode is MemoryMode.SIM:
        ranked = prefilter(bank, context_text(context), ports.embedder, m=q, skip_below=0)
        pairs = bank.read_attitudes([k for k, _ in ranked])
    else:
        return retrieve(
            bank, context, ports.llm, ports.embedder, cfg.retrieval,
            templates=ports.templates, retry_budget=cfg.retry_budget,
        )
    return RetrievedMemory(
        entities=tuple(e for e, _ in pairs),
        attitudes=tuple(a for _, a in pairs),
    )


def run_pipeline(
    catalog: dict[str, CatalogItem],
    point: EvaluationPoint,
    banks: dict[str, MemoryBank],
    general: GeneralMemoryState,
    ports: Ports,
    cfg: PipelineConfig,
    variant: VariantSpec = VariantSpec(),
    resolver: dict[str, str] | None = None,
) -> tuple[RecommendationResult, RetrievedMemory]:
    """Retrieval, expert candidates, and recommendation for one point.

    Banks must have been built from Train sessions beforehand; evaluation
    never writes new memories.
    """
    bank = banks.get(point.user_id)
    retrieved = select_memory(variant, bank, point.context, ports, cfg, point.key)

    if variant.without_ck:
        expert_ids: list[str] = []
    else:
        expert_ids = expert_candidates(general.expert, point.context, point_key=point.key)

    guidelines = None if variant.without_rg else general.guidelines
    req = RecommendationRequest(
        user_id=point.user_id,
        context=point.context,
        retrieved=retrieved,
        expert=tuple(expert_ids),
        guidelines=guidelines,
        list_length=cfg.list_length,
    )
    result = recommend(
        req, ports.llm, catalog,
        resolver=resolver, templates=ports.templates, retry_budget=cfg.retry_budget,
    )
    return result, retrieved
