"""Shared memory across users: expert candidates and reasoning guidelines.

Collaborative knowledge comes from a pluggable expert model; the built-in
default is an item co-occurrence + popularity model trained on the Train
split (any stronger recommender can be dropped in behind the same port, or
its precomputed candidates loaded from a file). Reasoning guidelines are a
small capped list of natural-language rules, updated by model self-reflection
on recommendation outcomes.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .dialogue import Corpus, Split, Utterance
from .errors import ParseFailure
from .llm import LanguageModelPort, OutputKind, complete
from .memory_bank import default_templates
from .prompts import PromptTemplate, TemplateName, render

log = logging.getLogger(__name__)

DEFAULT_CANDIDATE_COUNT = 40
GUIDELINE_CAP = 10

SEED_GUIDELINES = (
    "Let's think step by step",
    "Consider user's needs during conversations",
)


class ExpertModelPort:
    """Produces ranked candidate items for the current conversation state."""

    candidate_count: int = DEFAULT_CANDIDATE_COUNT

    def candidates(
        self,
        context: tuple[Utterance, ...],
        mentioned: list[tuple[str, ...]],
        point_key: tuple[str, str, int] | None = None,
    ) -> list[str]:
        raise NotImplementedError


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


class CoVisitExpert(ExpertModelPort):
    """Within-session item co-occurrence plus global popularity.

    Candidates are scored by summed co-occurrence with the items mentioned so
    far in the conversation; popularity breaks ties and covers contexts with
    no mentioned items. Items already mentioned are never returned.
    """

    def __init__(
        self,
        cooc: dict[tuple[str, str], int],
        popularity: Counter,
        catalog_ids: list[str],
        candidate_count: int = DEFAULT_CANDIDATE_COUNT,
    ):
        self.cooc = cooc
        self.popularity = popularity
        self.catalog_ids = sorted(catalog_ids)
        self.candidate_count = candidate_count

    def cooc_count(self, a: str, b: str) -> int:
        return self.cooc.get(_pair(a, b), 0)

    def candidates(self, context, mentioned, point_key=None) -> list[str]:
        seen: set[str] = set()
        for items in mentioned:
            seen.update(items)
        context_items = list(dict.fromkeys(i for items in mentioned for i in items))
        scored = []
        for item in self.catalog_ids:
            if item in seen:
                continue
            score = sum(self.cooc_count(a, item) for a in context_items)
            scored.append((-score, -self.popularity.get(item, 0), item))
        scored.sort()
        return [item for _, _, item in scored[: self.candidate_count]]


def train_covisit(corpus: Corpus, candidate_count: int = DEFAULT_CANDIDATE_COUNT) -> CoVisitExpert:
    """Build the co-occurrence expert from the Train split.

    With an empty Train split the expert degrades to popularity-only over
    the catalog (all-zero counts, lexicographic order).
    """
    cooc: dict[tuple[str, str], int] = {}
    popularity: Counter = Counter()
    n_sessions = 0
    for user in corpus.users.values():
        for session in user.sessions:
            if corpus.split_assignment.get(session.session_id) is not Split.TRAIN:
                continue
            n_sessions += 1
            items = sorted({i for u in session.utterances for i in u.mentioned_items})
            for item in items:
                popularity[item] += 1
            for i, a in enumerate(items):
                for b in items[i + 1 :]:
                    cooc[_pair(a, b)] = cooc.get(_pair(a, b), 0) + 1
    if n_sessions == 0:
        log.warning("train_covisit: empty Train split, popularity-only expert")
    return CoVisitExpert(cooc, popularity, list(corpus.catalog), candidate_count)


class ExternalExpert(ExpertModelPort):
    """Precomputed per-point candidate lists read from a JSONL file."""

    def __init__(self, path: str | Path, candidate_count: int = DEFAULT_CANDIDATE_COUNT):
        self.candidate_count = candidate_count
        self.table: dict[tuple[str, str, int], list[str]] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                key = (rec["user_id"], rec["session_id"], int(rec["turn_index"]))
                self.table[key] = list(rec["candidates"])

    def candidates(self, context, mentioned, point_key=None) -> list[str]:
        if point_key is None:
            return []
        seen = {i for items in mentioned for i in items}
        out = [c for c in self.table.get(point_key, []) if c not in seen]
        return out[: self.candidate_count]


def expert_candidates(
    expert: ExpertModelPort,
    context: tuple[Utterance, ...],
    mentioned: list[tuple[str, ...]] | None = None,
    point_key: tuple[str, str, int] | None = None,
) -> list[str]:
    """Ranked candidates for a conversation state, duplicates and mentions removed."""
    if mentioned is None:
        mentioned = [u.mentioned_items for u in context]
    out = expert.candidates(context, mentioned, point_key)
    return list(dict.fromkeys(out))[: expert.candidate_count]


# ---------------------------------------------------------------------------
# Reasoning guidelines
# ---------------------------------------------------------------------------

class Outcome(str, Enum):
    HIT = "hit"
    MISS = "miss"


@dataclass(frozen=True)
class ReflectionRecord:
    trajectory: str  # rendered recommendation prompt + model reasoning text
    outcome: Outcome
    response: str = ""  # the user's textual reaction to the recommendation


@dataclass(frozen=True)
class GuidelineSet:
    guidelines: tuple[str, ...]
    cap: int = GUIDELINE_CAP
    version: int = 0

    def __post_init__(self):
        if len(self.guidelines) > self.cap:
            raise ValueError("guideline set exceeds cap")


def seed_manual_guidelines(cap: int = GUIDELINE_CAP) -> GuidelineSet:
    """The hand-written starter rules, before any self-reflection."""
    return GuidelineSet(guidelines=SEED_GUIDELINES, cap=cap, version=0)


def reflect(
    guidelines: GuidelineSet,
    record: ReflectionRecord,
    llm: LanguageModelPort,
    templates: dict[TemplateName, PromptTemplate] | None = None,
    retry_budget: int = 1,
) -> GuidelineSet:
    """One self-reflection step: the model rewrites the guideline set.

    The returned list replaces the current one, truncated to the cap by
    dropping the oldest entries; on unusable output the set is returned
    unchanged (same version) and the failure is logged.
    """
    templates = templates or default_templates()
    outcome_text = record.outcome.value + (f": {record.response}" if record.response else "")
    prompt = render(
        templates[TemplateName.REFLECT],
        {
            "trajectory": record.trajectory,
            "outcome": outcome_text,
            "guidelines": json.dumps(list(guidelines.guidelines), ensure_ascii=False),
            "cap": guidelines.cap,
        },
    )
    try:
        out = complete(llm, prompt, OutputKind.GUIDELINE_SET, retry_budget)
    except ParseFailure:
        log.warning("reflection skipped: unusable guideline output")
        return guidelines
    updated = [g for g in out.payload if g.strip()]
    if len(updated) > guidelines.cap:
        updated = updated[-guidelines.cap :]
    return GuidelineSet(guidelines=tuple(updated), cap=guidelines.cap, version=guidelines.version + 1)


def save_guidelines(gs: GuidelineSet, path: str | Path) -> None:
    doc = {"version": gs.version, "cap": gs.cap, "guidelines": list(gs.guidelines)}
    Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=1), encoding="utf-8")


def load_guidelines(path: str | Path) -> GuidelineSet:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return GuidelineSet(
        guidelines=tuple(doc["guidelines"]),
        cap=int(doc.get("cap", GUIDELINE_CAP)),
        version=int(doc["version"]),
    )
