"""Dialogue data model: sessions, users, corpus loading and splitting.

A corpus is a set of users, each with a chronologically ordered list of
dialogue sessions. Sessions are assigned to Train/Valid/Test splits per
user by recency, and system turns carrying ground-truth items become the
evaluation points of the offline harness.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

from .errors import DuplicateSessionId, MalformedRecord
from .textnorm import canonical_title

log = logging.getLogger(__name__)


class Speaker(str, Enum):
    USER = "user"
    SYSTEM = "system"


class Split(str, Enum):
    TRAIN = "train"
    VALID = "valid"
    TEST = "test"


class CorpusFormat(str, Enum):
    SESSIONS_JSONL = "sessions-jsonl"


@dataclass(frozen=True)
class Utterance:
    turn_index: int  # 1-based, contiguous within a session
    speaker: Speaker
    text: str
    mentioned_items: tuple[str, ...] = ()
    ground_truth_items: tuple[str, ...] = ()

    def __post_init__(self):
        if self.speaker is not Speaker.SYSTEM and self.ground_truth_items:
            raise ValueError("ground_truth_items only allowed on system turns")


@dataclass(frozen=True)
class DialogueSession:
    session_id: str
    user_id: str
    session_time: datetime
    utterances: tuple[Utterance, ...]

    def __post_init__(self):
        if not self.utterances:
            raise ValueError(f"session {self.session_id!r} has no utterances")
        for i, utt in enumerate(self.utterances, start=1):
            if utt.turn_index != i:
                raise ValueError(
                    f"session {self.session_id!r}: turn_index {utt.turn_index} "
                    f"at position {i} (must be contiguous from 1)"
                )

    def transcript(self, up_to: int | None = None) -> str:
        """Plain-text rendering, one ``speaker: text`` line per turn."""
        turns = self.utterances if up_to is None else self.utterances[: up_to - 1]
        return "\n".join(f"{u.speaker.value}: {u.text}" for u in turns)


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    sessions: tuple[DialogueSession, ...]  # sorted by (session_time, session_id)


@dataclass(frozen=True)
class CatalogItem:
    item_id: str
    title: str
    attrs: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Corpus:
    users: dict[str, UserRecord]
    catalog: dict[str, CatalogItem]
    split_assignment: dict[str, Split] = field(default_factory=dict)

    def sessions(self):
        for user in self.users.values():
            yield from user.sessions

    def sessions_of(self, user_id: str, split: Split) -> list[DialogueSession]:
        user = self.users.get(user_id)
        if user is None:
            return []
        return [s for s in user.sessions if self.split_assignment.get(s.session_id) is split]

    def title_of(self, item_id: str) -> str:
        item = self.catalog.get(item_id)
        return item.title if item else item_id

    def title_resolver(self) -> dict[str, str]:
        """Canonical title/id text -> item_id, for matching free-text output."""
        mapping: dict[str, str] = {}
        for item_id in sorted(self.catalog):
            mapping.setdefault(canonical_title(item_id), item_id)
        for item_id in sorted(self.catalog):
            title = self.catalog[item_id].title
            mapping.setdefault(canonical_title(title), item_id)
        return mapping


@dataclass(frozen=True)
class EvaluationPoint:
    user_id: str
    session_id: str
    turn_index: int
    context: tuple[Utterance, ...]  # turns 1..k-1
    ground_truth: tuple[str, ...]

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.user_id, self.session_id, self.turn_index)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _parse_time(raw, line_no: int) -> datetime:
    if not isinstance(raw, str):
        raise MalformedRecord(line_no, "session_time must be an RFC3339 string")
    try:
        ts = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except ValueError as exc:
        raise MalformedRecord(line_no, f"bad session_time {raw!r}") from exc
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


def _parse_turns(raw_turns, line_no: int) -> tuple[Utterance, ...]:
    if not isinstance(raw_turns, list) or not raw_turns:
        raise MalformedRecord(line_no, "turns must be a non-empty list")
    utterances = []
    for i, turn in enumerate(raw_turns, start=1):
        if not isinstance(turn, dict):
            raise MalformedRecord(line_no, f"turn {i} is not an object")
        speaker_raw = turn.get("speaker")
        if speaker_raw not in (Speaker.USER.value, Speaker.SYSTEM.value):
            raise MalformedRecord(line_no, f"turn {i}: bad speaker {speaker_raw!r}")
        text = turn.get("text")
        if not isinstance(text, str):
            raise MalformedRecord(line_no, f"turn {i}: text must be a string")
        items = turn.get("items", [])
        truth = turn.get("ground_truth", [])
        for fname, val in (("items", items), ("ground_truth", truth)):
            if not isinstance(val, list) or not all(isinstance(x, str) for x in val):
                raise MalformedRecord(line_no, f"turn {i}: {fname} must be a list of strings")
        speaker = Speaker(speaker_raw)
        if truth and speaker is not Speaker.SYSTEM:
            raise MalformedRecord(line_no, f"turn {i}: ground_truth on a user turn")
        utterances.append(
            Utterance(
                turn_index=i,
                speaker=speaker,
                text=text,
                mentioned_items=tuple(dict.fromkeys(items)),
                ground_truth_items=tuple(dict.fromkeys(truth)),
            )
        )
    return tuple(utterances)


def load_catalog(path: str | Path) -> dict[str, CatalogItem]:
    """Load a JSONL catalog file: {"item_id", "title", "attrs"} per line."""
    catalog: dict[str, CatalogItem] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, f"bad JSON: {exc}") from exc
            item_id = rec.get("item_id")
            if not isinstance(item_id, str) or not item_id:
                raise MalformedRecord(line_no, "item_id missing")
            title = rec.get("title", item_id)
            attrs = rec.get("attrs", {}) or {}
            catalog[item_id] = CatalogItem(item_id=item_id, title=title, attrs=dict(attrs))
    return catalog


def load_corpus(
    path: str | Path,
    catalog_path: str | Path | None = None,
    fmt: CorpusFormat = CorpusFormat.SESSIONS_JSONL,
) -> Corpus:
    """Load a sessions JSONL file (one session object per line).

    The catalog becomes the union of the declared catalog file entries and
    every item mentioned anywhere in the sessions; mention-only items get
    their id as display title.
    """
    if fmt is not CorpusFormat.SESSIONS_JSONL:
        raise ValueError(f"unsupported corpus format: {fmt}")

    sessions_by_user: dict[str, list[DialogueSession]] = {}
    seen_sessions: set[str] = set()
    mentioned: set[str] = set()

    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, f"bad JSON: {exc}") from exc
            if not isinstance(rec, dict):
                raise MalformedRecord(line_no, "record is not an object")
            session_id = rec.get("session_id")
            user_id = rec.get("user_id")
            if not isinstance(session_id, str) or not session_id:
                raise MalformedRecord(line_no, "session_id missing")
            if not isinstance(user_id, str) or not user_id:
                raise MalformedRecord(line_no, "user_id missing")
            if session_id in seen_sessions:
                raise DuplicateSessionId(session_id)
            seen_sessions.add(session_id)
            session = DialogueSession(
                session_id=session_id,
                user_id=user_id,
                session_time=_parse_time(rec.get("session_time"), line_no),
                utterances=_parse_turns(rec.get("turns"), line_no),
            )
            for utt in session.utterances:
                mentioned.update(utt.mentioned_items)
                mentioned.update(utt.ground_truth_items)
            sessions_by_user.setdefault(user_id, []).append(session)

    catalog = load_catalog(catalog_path) if catalog_path else {}
    for item_id in sorted(mentioned):
        catalog.setdefault(item_id, CatalogItem(item_id=item_id, title=item_id))

    users = {
        uid: UserRecord(
            user_id=uid,
            sessions=tuple(sorted(sessions, key=lambda s: (s.session_time, s.session_id))),
        )
        for uid, sessions in sorted(sessions_by_user.items())
    }
    return Corpus(users=users, catalog=catalog)


# ---------------------------------------------------------------------------
# Corpus artifact (single-file JSON) round-trip
# ---------------------------------------------------------------------------

def save_corpus(corpus: Corpus, path: str | Path) -> None:
    doc = {
        "format": "memrec-corpus.v1",
        "catalog": [
            {"item_id": it.item_id, "title": it.title, "attrs": it.attrs}
            for it in (corpus.catalog[k] for k in sorted(corpus.catalog))
        ],
        "users": [
            {
                "user_id": user.user_id,
                "sessions": [
                    {
                        "session_id": s.session_id,
                        "user_id": s.user_id,
                        "session_time": s.session_time.isoformat(),
                        "turns": [
                            {
                                "speaker": u.speaker.value,
                                "text": u.text,
                                "items": list(u.mentioned_items),
                                "ground_truth": list(u.ground_truth_items),
                            }
                            for u in s.utterances
                        ],
                    }
                    for s in user.sessions
                ],
            }
            for user in (corpus.users[k] for k in sorted(corpus.users))
        ],
        "split": {sid: sp.value for sid, sp in sorted(corpus.split_assignment.items())},
    }
    Path(path).write_text(json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=1), encoding="utf-8")


def read_corpus(path: str | Path) -> Corpus:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "memrec-corpus.v1":
        raise MalformedRecord(0, f"not a corpus file: {path}")
    catalog = {
        rec["item_id"]: CatalogItem(rec["item_id"], rec["title"], dict(rec.get("attrs", {})))
        for rec in doc["catalog"]
    }
    users: dict[str, UserRecord] = {}
    for urec in doc["users"]:
        sessions = []
        for srec in urec["sessions"]:
            sessions.append(
                DialogueSession(
                    session_id=srec["session_id"],
                    user_id=srec["user_id"],
                    session_time=datetime.fromisoformat(srec["session_time"]),
                    utterances=_parse_turns(srec["turns"], 0),
                )
            )
        sessions.sort(key=lambda s: (s.session_time, s.session_id))
        users[urec["user_id"]] = UserRecord(user_id=urec["user_id"], sessions=tuple(sessions))
    split = {sid: Split(sp) for sid, sp in doc.get("split", {}).items()}
    return Corpus(users=users, catalog=catalog, split_assignment=split)


# ---------------------------------------------------------------------------
# Splitting and filtering
# ---------------------------------------------------------------------------

def chronological_split(corpus: Corpus, n_valid: int = 1, n_test: int = 1) -> Corpus:
    """Assign each user's most recent sessions to Test, then Valid, rest Train.

    Users with fewer than n_test sessions put everything into Test and end
    up with zero Train sessions (cold-start users).
    """
    if n_valid < 0:
        raise ValueError("n_valid must be >= 0")
    if n_test < 1:
        raise ValueError("n_test must be >= 1")
    assignment: dict[str, Split] = {}
    for user in corpus.users.values():
        sessions = user.sessions
        if len(sessions) <= n_test:
            for s in sessions:
                assignment[s.session_id] = Split.TEST
            continue
        n = len(sessions)
        test_start = n - n_test
        valid_start = max(0, test_start - n_valid)
        for i, s in enumerate(sessions):
            if i >= test_start:
                assignment[s.session_id] = Split.TEST
            elif i >= valid_start:
                assignment[s.session_id] = Split.VALID
            else:
                assignment[s.session_id] = Split.TRAIN
    return replace(corpus, split_assignment=assignment)


def filter_duplicate_targets(corpus: Corpus) -> Corpus:
    """Clear ground truth at evaluation points whose targets were already mentioned.

    A system turn's ground truth is dropped entirely when it intersects the
    items mentioned in any earlier turn of the same session; this prevents
    repeat-mention shortcuts from inflating evaluation scores.
    """
    new_users: dict[str, UserRecord] = {}
    cleared = 0
    for uid, user in corpus.users.items():
        new_sessions = []
        for session in user.sessions:
            seen: set[str] = set()
            new_utts: list[Utterance] = []
            changed = False
            for utt in session.utterances:
                if utt.ground_truth_items and seen.intersection(utt.ground_truth_items):
                    utt = replace(utt, ground_truth_items=())
                    changed = True
                    cleared += 1
                seen.update(utt.mentioned_items)
                new_utts.append(utt)
            new_sessions.append(
                replace(session, utterances=tuple(new_utts)) if changed else session
            )
        new_users[uid] = replace(user, sessions=tuple(new_sessions))
    if cleared:
        log.info("filter_duplicate_targets: cleared %d evaluation points", cleared)
    return replace(corpus, users=new_users)


def evaluation_points(corpus: Corpus, split: Split) -> list[EvaluationPoint]:
    """All system turns with non-empty ground truth in the given split."""
    points: list[EvaluationPoint] = []
    for user in corpus.users.values():
        for session in user.sessions:
            if corpus.split_assignment.get(session.session_id) is not split:
                continue
            for utt in session.utterances:
                if utt.speaker is Speaker.SYSTEM and utt.ground_truth_items:
                    points.append(
                        EvaluationPoint(
                            user_id=user.user_id,
                            session_id=session.session_id,
                            turn_index=utt.turn_index,
                            context=session.utterances[: utt.turn_index - 1],
                            ground_truth=utt.ground_truth_items,
                        )
                    )
    return points
