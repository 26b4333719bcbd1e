"""Live conversational recommendation service.

JSON over HTTP: open a session, send utterances (each one runs the full
retrieval + expert + recommendation pipeline and returns the list with the
memory entries that shaped it), optionally attach feedback, and end the
session, which is the moment extracted preferences are committed to the
user's persistent memory bank.

Bank access is serialized per user: concurrent sessions of one user share a
single in-memory bank and their end-of-session commits apply in end-call
order.
"""

from __future__ import annotations

import logging
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .config import AppConfig
from .dialogue import CatalogItem, Corpus, DialogueSession, Speaker, Utterance, read_corpus
from .errors import LlmUnavailable
from .general_memory import (
    GuidelineSet,
    Outcome,
    ReflectionRecord,
    load_guidelines,
    reflect,
    save_guidelines,
    seed_manual_guidelines,
    train_covisit,
)
from .llm import LanguageModelPort
from .memory_bank import MemoryBank, MemoryStore
from .recommender import (
    Provenance,
    RecommendationRequest,
    RecommendationResult,
    build_title_resolver,
    recommend,
)
from .retrieval import Embedder, RetrievalConfig, RetrievedMemory, retrieve
from .textnorm import canonical_title

log = logging.getLogger(__name__)


class SessionState(str, Enum):
    OPEN = "open"
    ENDED = "ended"


@dataclass
class LiveSession:
    session_id: str
    user_id: str
    started_at: datetime
    turns: list[Utterance] = field(default_factory=list)
    state: SessionState = SessionState.OPEN
    trajectories: dict[int, str] = field(default_factory=dict)
    feedback: list[tuple[int, str]] = field(default_factory=list)  # (turn_index, up|down)


class ServiceRuntime:
    """Everything the endpoint handlers share."""

    def __init__(self, cfg: AppConfig):
        self.cfg = cfg
        self.store = MemoryStore(cfg.store_root)
        ports = cfg.make_ports()
        self.llm: LanguageModelPort = ports.llm
        self.embedder: Embedder = ports.embedder
        self.templates = ports.templates
        self.retrieval: RetrievalConfig = cfg.retrieval
        self.list_length = cfg.list_length
        self.retry_budget = cfg.retry_budget

        corpus_path = cfg.service_corpus
        if corpus_path is not None:
            corpus = read_corpus(corpus_path)
        else:
            corpus = Corpus(users={}, catalog={})
        self.catalog: dict[str, CatalogItem] = corpus.catalog
        self.expert = cfg.make_expert() or train_covisit(corpus, cfg.candidate_count)
        self.resolver = build_title_resolver(self.catalog)

        self._guidelines_path = cfg.store_root / "guidelines.json"
        self.guidelines: GuidelineSet = self._load_guidelines()
        self._guidelines_lock = threading.Lock()

        self.sessions: dict[str, LiveSession] = {}
        self._registry_lock = threading.Lock()
        self._user_locks: dict[str, threading.Lock] = {}
        self._banks: dict[str, MemoryBank] = {}

    def _load_guidelines(self) -> GuidelineSet:
        if self._guidelines_path.exists():
            return load_guidelines(self._guidelines_path)
        return seed_manual_guidelines()

    def user_lock(self, user_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._user_locks.setdefault(user_id, threading.Lock())

    def bank_for(self, user_id: str) -> MemoryBank:
        """In-memory bank shared by all of a user's sessions (load lazily)."""
        with self._registry_lock:
            bank = self._banks.get(user_id)
            if bank is None:
                bank = self.store.restore(user_id)
                self._banks[user_id] = bank
            return bank

    def swap_guidelines(self, updated: GuidelineSet) -> None:
        with self._guidelines_lock:
            self.guidelines = updated
            self.cfg.store_root.mkdir(parents=True, exist_ok=True)
            save_guidelines(updated, self._guidelines_path)

    def detect_mentions(self, text: str) -> list[str]:
        """Catalog items whose title appears verbatim in the utterance."""
        canon = f" {canonical_title(text)} "
        found = []
        for item_id in sorted(self.catalog):
            title = canonical_title(self.catalog[item_id].title)
            if title and f" {title} " in canon:
                found.append(item_id)
        return found


class StartSessionBody(BaseModel):
    user_id: str = ""


class UtteranceBody(BaseModel):
    text: str = ""
    feedback: str | None = None  # up|down, applies to the previous system turn


def create_app(cfg: AppConfig | None = None) -> FastAPI:
    rt = ServiceRuntime(cfg or AppConfig())
    app = FastAPI(title="memrec service")
    app.state.runtime = rt

    if rt.cfg.cors_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=rt.cfg.cors_origins,
            allow_methods=["*"],
            allow_headers=["*"],
        )

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "malformed request body"})

    def _session_or_error(session_id: str) -> tuple[LiveSession | None, JSONResponse | None]:
        session = rt.sessions.get(session_id)
        if session is None:
            return None, JSONResponse(status_code=404, content={"error": "unknown session"})
        if session.state is SessionState.ENDED:
            return None, JSONResponse(status_code=409, content={"error": "session ended"})
        return session, None

    @app.post("/api/sessions")
    def start_session(body: StartSessionBody):
        if not body.user_id.strip():
            return JSONResponse(status_code=400, content={"error": "user_id required"})
        user_id = body.user_id.strip()
        session = LiveSession(
            session_id=uuid.uuid4().hex,
            user_id=user_id,
            started_at=datetime.now(timezone.utc),
        )
        rt.bank_for(user_id)  # restore from store before first utterance
        with rt._registry_lock:
            rt.sessions[session.session_id] = session
        return {"session_id": session.session_id, "user_id": user_id}

    @app.post("/api/sessions/{session_id}/utterances")
    def post_utterance(session_id: str, body: UtteranceBody):
        session, err = _session_or_error(session_id)
        if err is not None:
            return err
        if not body.text.strip():
            return JSONResponse(status_code=400, content={"error": "text required"})
        if body.feedback is not None:
            if body.feedback not in ("up", "down"):
                return JSONResponse(status_code=400, content={"error": "feedback must be up or down"})
            last_system = next(
                (u.turn_index for u in reversed(session.turns) if u.speaker is Speaker.SYSTEM),
                None,
            )
            if last_system is not None:
                session.feedback.append((last_system, body.feedback))

        user_utt = Utterance(
            turn_index=len(session.turns) + 1,
            speaker=Speaker.USER,
            text=body.text,
            mentioned_items=tuple(rt.detect_mentions(body.text)),
        )
        session.turns.append(user_utt)
        context = tuple(session.turns)

        bank = rt.bank_for(session.user_id)
        lock = rt.user_lock(session.user_id)
        fallback = False
        try:
            with lock:
                if len(bank) == 0:
                    retrieved = RetrievedMemory.empty()
                else:
                    retrieved = retrieve(
                        bank, context, rt.llm, rt.embedder, rt.retrieval,
                        templates=rt.templates, retry_budget=rt.retry_budget,
                    )
            expert_ids = rt.expert.candidates(
                context, [u.mentioned_items for u in context], None
            )
            req = RecommendationRequest(
                user_id=session.user_id,
                context=context,
                retrieved=retrieved,
                expert=tuple(dict.fromkeys(expert_ids)),
                guidelines=rt.guidelines,
                list_length=rt.list_length,
            )
            result = recommend(
                req, rt.llm, rt.catalog, resolver=rt.resolver,
                templates=rt.templates, retry_budget=rt.retry_budget, want_reply=True,
            )
        except LlmUnavailable as exc:
            log.warning("llm unavailable, serving expert-only fallback: %s", exc)
            fallback = True
            mentioned = {i for u in context for i in u.mentioned_items}
            items = tuple(
                i for i in rt.expert.candidates(context, [u.mentioned_items for u in context], None)
                if i not in mentioned
            )[: rt.list_length]
            result = RecommendationResult(
                items=items,
                provenance=tuple(Provenance.FALLBACK_PAD for _ in items),
                trajectory="<llm unavailable>",
                reply="The recommendation model is unreachable; here are popular picks.",
                degraded=True,
            )

        system_utt = Utterance(
            turn_index=len(session.turns) + 1,
            speaker=Speaker.SYSTEM,
            text=result.reply,
            mentioned_items=result.items,
        )
        session.turns.append(system_utt)
        session.trajectories[system_utt.turn_index] = result.trajectory

        payload = {
            "reply": result.reply,
            "recommendations": [
                {
                    "item_id": item,
                    "title": rt.catalog[item].title if item in rt.catalog else item,
                    "provenance": prov.value,
                }
                for item, prov in zip(result.items, result.provenance)
            ],
            "retrieved": [
                {"entity": e, "attitude": a}
                for e, a in zip(retrieved.entities, retrieved.attitudes)
            ] if not fallback else [],
            "guidelines_version": rt.guidelines.version,
            "fallback": fallback or result.degraded,
        }
        if fallback:
            return JSONResponse(status_code=502, content=payload)
        return payload

    @app.post("/api/sessions/{session_id}/end")
    def end_session(session_id: str):
        session, err = _session_or_error(session_id)
        if err is not None:
            return err
        entities_added = 0
        lock = rt.user_lock(session.user_id)
        with lock:
            if session.turns:
                dialogue = _as_dialogue(session)
                bank = rt.bank_for(session.user_id)
                outcome = bank.extract_and_add(
                    dialogue, rt.llm, rt.templates, rt.retry_budget
                )
                entities_added = outcome.entities_touched
                rt.store.persist(bank)
            session.state = SessionState.ENDED
        if session.feedback:
            turn_index, verdict = session.feedback[-1]
            record = ReflectionRecord(
                trajectory=session.trajectories.get(turn_index, ""),
                outcome=Outcome.HIT if verdict == "up" else Outcome.MISS,
                response=f"The user gave a thumbs {verdict}.",
            )
            updated = reflect(rt.guidelines, record, rt.llm, rt.templates, rt.retry_budget)
            if updated.version != rt.guidelines.version:
                rt.swap_guidelines(updated)
        return {"entities_added": entities_added}

    @app.get("/api/users/{user_id}/memory")
    def get_memory(user_id: str):
        # snapshot straight from the store file: no timestamp refresh
        bank = rt.store.restore(user_id)
        return {
            "user_id": user_id,
            "entries": [
                {"entity": e.entity, "attitude": e.attitude, "last_touched": e.last_touched}
                for e in bank.peek()
            ],
        }

    return app


def _as_dialogue(session: LiveSession) -> DialogueSession:
    return DialogueSession(
        session_id=session.session_id,
        user_id=session.user_id,
        session_time=session.started_at,
        utterances=tuple(session.turns),
    )
