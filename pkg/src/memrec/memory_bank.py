"""Per-user entity memory bank: add, merge, delete, read, persist.

Each user owns one bank mapping canonicalized entities to attitudes plus a
logical timestamp. Time is a per-bank monotone tick rather than wall time so
offline replays of historical datasets stay reproducible; every mutating or
reading operation that touches entries advances the tick and stamps the
touched entries with it.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable
from urllib.parse import quote, unquote

from .dialogue import DialogueSession
from .errors import CorruptRecord, EntityNotFound, ParseFailure, StoreIo
from .llm import LanguageModelPort, OutputKind, complete
from .prompts import PromptTemplate, TemplateName, load_templates, render
from .textnorm import canonical_entity

log = logging.getLogger(__name__)

_DEFAULT_TEMPLATES: dict[TemplateName, PromptTemplate] | None = None


def default_templates() -> dict[TemplateName, PromptTemplate]:
    global _DEFAULT_TEMPLATES
    if _DEFAULT_TEMPLATES is None:
        _DEFAULT_TEMPLATES = load_templates()
    return _DEFAULT_TEMPLATES


@dataclass
class MemoryEntry:
    entity: str  # canonical key
    attitude: str
    last_touched: int


@dataclass(frozen=True)
class AddResult:
    written: tuple[str, ...]
    merged: tuple[str, ...]
    skipped: bool = False  # LLM output unusable, bank left unchanged

    @property
    def entities_touched(self) -> int:
        return len(self.written) + len(self.merged)


@dataclass(frozen=True)
class MergeResult:
    attitude: str
    fallback: bool  # merge LLM failed; new attitude appended verbatim


class MemoryBank:
    """Entity -> (attitude, last_touched) mapping with a logical clock.

    Operations on one bank are not thread-safe; callers serialize per user
    (banks of different users are independent).
    """

    def __init__(
        self,
        user_id: str,
        normalizer: Callable[[str], str] | None = None,
    ):
        self.user_id = user_id
        self.entries: dict[str, MemoryEntry] = {}
        self.clock = 0
        # optional hook mapping canonical entities onto shared keys, for
        # semantic merging of near-identical entities; default off
        self.normalizer = normalizer

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, entity: str) -> bool:
        return self._key(entity) in self.entries

    def _key(self, entity: str) -> str:
        key = canonical_entity(entity)
        if self.normalizer is not None:
            key = self.normalizer(key)
        return key

    def _tick(self) -> int:
        self.clock += 1
        return self.clock

    def snapshot(self) -> tuple:
        """Structural state for equality checks and tests."""
        return (
            self.user_id,
            tuple((e.entity, e.attitude, e.last_touched) for e in self.entries.values()),
            self.clock,
        )

    def __eq__(self, other) -> bool:
        return isinstance(other, MemoryBank) and self.snapshot() == other.snapshot()

    # ------------------------------------------------------------------
    # Operations
    # ------------------------------------------------------------------

    def extract_and_add(
        self,
        session: DialogueSession,
        llm: LanguageModelPort,
        templates: dict[TemplateName, PromptTemplate] | None = None,
        retry_budget: int = 1,
    ) -> AddResult:
        """Extract entity/attitude pairs from a finished session and store them.

        One extraction call per session; existing entities are merged rather
        than overwritten. On unparseable output the session is skipped and
        the bank is left untouched.
        """
        if session.user_id != self.user_id:
            raise ValueError(
                f"session {session.session_id!r} belongs to {session.user_id!r}, "
                f"not {self.user_id!r}"
            )
        templates = templates or default_templates()
        prompt = render(templates[TemplateName.ADD], {"dialogue": session.transcript()})
        try:
            out = complete(llm, prompt, OutputKind.ENTITY_ATTITUDE_MAP, retry_budget)
        except ParseFailure:
            log.warning("add skipped for session %s: unusable extraction", session.session_id)
            return AddResult(written=(), merged=(), skipped=True)

        pairs = [(self._key(e), a) for e, a in out.payload.items() if self._key(e)]
        if not pairs:
            return AddResult(written=(), merged=())

        written: list[str] = []
        merged: list[str] = []
        ts_gen = self._tick()
        for entity, attitude in pairs:
            if entity in self.entries:
                self.merge_attitude(entity, attitude, llm, templates, retry_budget)
                merged.append(entity)
            else:
                self.entries[entity] = MemoryEntry(entity, attitude, ts_gen)
                written.append(entity)
        return AddResult(written=tuple(written), merged=tuple(merged))

    def merge_attitude(
        self,
        entity: str,
        new_attitude: str,
        llm: LanguageModelPort,
        templates: dict[TemplateName, PromptTemplate] | None = None,
        retry_budget: int = 1,
    ) -> MergeResult:
        """Merge a new attitude into an existing entry via the model.

        The prompt instructs the model to prioritize the new attitude on
        conflict. If the model output is unusable, the new attitude is
        appended verbatim instead of being dropped.
        """
        key = self._key(entity)
        entry = self.entries.get(key)
        if entry is None:
            raise EntityNotFound(entity)
        templates = templates or default_templates()
        prompt = render(
            templates[TemplateName.MERGE],
            {"existing_attitude": entry.attitude, "new_attitude": new_attitude},
        )
        try:
            out = complete(llm, prompt, OutputKind.MERGED_ATTITUDE, retry_budget)
            merged, fallback = str(out.payload), False
        except ParseFailure:
            merged, fallback = f"{entry.attitude}; {new_attitude}", True
            log.warning("merge fallback for entity %r: kept both attitudes", key)
        entry.attitude = merged
        entry.last_touched = self._tick()
        return MergeResult(attitude=merged, fallback=fallback)

    def delete_stale(self, threshold: int) -> list[str]:
        """Drop entries not touched for more than `threshold` ticks.

        Entries at exactly the threshold age are kept. Returns the removed
        entity keys.
        """
        if threshold <= 0:
            raise ValueError("threshold must be > 0")
        now = self.clock
        removed = [k for k, e in self.entries.items() if now - e.last_touched > threshold]
        for k in removed:
            del self.entries[k]
        if removed:
            self._tick()
        return removed

    def read_attitudes(self, entities: list[str]) -> list[tuple[str, str]]:
        """Attitudes for the requested entities, in request order.

        Absent entities are skipped. Reading refreshes the timestamp of every
        entry returned.
        """
        hits = [(raw, self.entries[self._key(raw)]) for raw in entities if self._key(raw) in self.entries]
        if not hits:
            return []
        ts = self._tick()
        out = []
        for _, entry in hits:
            entry.last_touched = ts
            out.append((entry.entity, entry.attitude))
        return out

    def peek(self) -> list[MemoryEntry]:
        """Read-only view, no timestamp refresh (memory inspector)."""
        return [MemoryEntry(e.entity, e.attitude, e.last_touched) for e in self.entries.values()]


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

class MemoryStore:
    """One JSONL file per user plus a clock sidecar, under a root directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _bank_path(self, user_id: str) -> Path:
        return self.root / f"{quote(user_id, safe='')}.mem.jsonl"

    def _clock_path(self, user_id: str) -> Path:
        return self.root / f"{quote(user_id, safe='')}.clock.json"

    def persist(self, bank: MemoryBank) -> None:
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            lines = [
                json.dumps(
                    {"entity": e.entity, "attitude": e.attitude, "last_touched": e.last_touched},
                    ensure_ascii=False,
                )
                for e in bank.entries.values()
            ]
            self._write_atomic(self._bank_path(bank.user_id), "\n".join(lines) + ("\n" if lines else ""))
            self._write_atomic(self._clock_path(bank.user_id), json.dumps({"clock": bank.clock}))
        except OSError as exc:
            raise StoreIo(f"cannot persist bank for {bank.user_id!r}: {exc}") from exc

    @staticmethod
    def _write_atomic(path: Path, text: str) -> None:
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)

    def restore(self, user_id: str) -> MemoryBank:
        """Load a user's bank; unknown users get a fresh empty bank."""
        bank = MemoryBank(user_id)
        path = self._bank_path(user_id)
        if not path.exists():
            return bank
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise StoreIo(f"cannot read {path}: {exc}") from exc
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                entity = rec["entity"]
                attitude = rec["attitude"]
                ts = rec["last_touched"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorruptRecord(f"{path}:{line_no}: {exc}") from exc
            if not isinstance(entity, str) or not isinstance(attitude, str) or not isinstance(ts, int):
                raise CorruptRecord(f"{path}:{line_no}: bad field types")
            bank.entries[entity] = MemoryEntry(entity, attitude, ts)
        clock_path = self._clock_path(user_id)
        if clock_path.exists():
            try:
                bank.clock = int(json.loads(clock_path.read_text(encoding="utf-8"))["clock"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorruptRecord(f"{clock_path}: {exc}") from exc
        else:
            bank.clock = max((e.last_touched for e in bank.entries.values()), default=0)
        return bank

    def user_ids(self) -> list[str]:
        if not self.root.exists():
            return []
        return sorted(
            unquote(p.name[: -len(".mem.jsonl")])
            for p in self.root.glob("*.mem.jsonl")
        )
