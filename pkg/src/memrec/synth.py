"""Deterministic synthetic corpus generator for offline runs and tests.

Builds a small movie-flavoured corpus with known structure: warm users carry
annotated preference entities in their train sessions (the mock extractor
reads the ``[[entity::attitude]]`` markers back out of the transcript), test
conversations name a known-relevant subset of those entities, and item
co-mentions are planted so the co-occurrence expert can serve cold users.
The planted relevance map is written alongside the data so tests can score
retrieval precision against ground truth.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

GENRES = (
    "space opera", "noir thriller", "romantic comedy", "gritty western",
    "cyberpunk heist", "haunted manor", "courtroom drama", "deep sea",
    "time travel", "samurai epic",
)
NUMBER_WORDS = ("One", "Two", "Three", "Four", "Five", "Six")
ACTORS = (
    "casey brook", "robin vale", "mara quinn", "theo marsh", "ira bellweather",
    "june okafor", "silas hart", "nadia volkov", "omar reyes", "petra lindqvist",
)
FILLERS = (
    "It has been a long week and I just want something easy to sink into tonight.",
    "We usually make popcorn and argue about the pick for twenty minutes first.",
    "My last few picks were duds so the pressure is on this time.",
    "Subtitles are fine by me as long as the story moves along.",
    "Nothing too long please, I have an early start tomorrow morning.",
    "My roommate might join so bonus points if it works for a group.",
)
EXTRAS = ("slow burn pacing", "practical effects", "ensemble casts", "moody soundtracks")


@dataclass(frozen=True)
class SynthSpec:
    n_warm: int = 20
    n_cold: int = 4
    seed: int = 7
    # split geometry the fixture is designed for: every user has >= 3
    # sessions, cold users' 3 sessions all land in valid/test
    n_valid: int = 2
    n_test: int = 1


def _item_id(genre_idx: int, j: int) -> str:
    return f"it-{genre_idx:02d}{j}"


def _title(genre: str, j: int) -> str:
    return " ".join(w.capitalize() for w in genre.split()) + " " + NUMBER_WORDS[j]


def generate(out_dir: str | Path, spec: SynthSpec = SynthSpec()) -> dict[str, Path]:
    """Write sessions.jsonl, catalog.jsonl, and planted.json into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(spec.seed)
    base_time = datetime(2024, 1, 1, tzinfo=timezone.utc)

    catalog = []
    for gi, genre in enumerate(GENRES):
        for j in range(len(NUMBER_WORDS)):
            catalog.append(
                {"item_id": _item_id(gi, j), "title": _title(genre, j), "attrs": {"genre": genre}}
            )

    sessions: list[dict] = []
    planted: dict[str, dict] = {}
    cold_users: list[str] = []

    def session_time(user_idx: int, session_idx: int) -> str:
        return (base_time + timedelta(days=user_idx, hours=session_idx)).isoformat()

    def add_session(user_id: str, user_idx: int, session_idx: int, turns: list[dict]) -> str:
        session_id = f"s-{user_id}-{session_idx}"
        sessions.append(
            {
                "session_id": session_id,
                "user_id": user_id,
                "session_time": session_time(user_idx, session_idx),
                "turns": turns,
            }
        )
        return session_id

    def user_turn(text: str, items: list[str] | None = None) -> dict:
        return {"speaker": "user", "text": text, "items": items or [], "ground_truth": []}

    def system_turn(text: str, items: list[str] | None = None, truth: list[str] | None = None) -> dict:
        return {
            "speaker": "system",
            "text": text,
            "items": items or [],
            "ground_truth": truth or [],
        }

    for i in range(spec.n_warm):
        user_id = f"u{i:02d}"
        g1, g2, gd = i % 10, (i + 3) % 10, (i + 5) % 10
        genre1, genre2, genre_d = GENRES[g1], GENRES[g2], GENRES[gd]
        a1, a2, a3 = (ACTORS[(i + k) % len(ACTORS)] for k in (0, 4, 7))
        extra = EXTRAS[i % len(EXTRAS)]
        n_train = 2 + (i % 2)  # 2 or 3 train sessions
        session_idx = 0

        # Train sessions. The first and last always co-mention the two lead
        # items of each favourite genre so the pair counts are planted.
        for t in range(n_train):
            vary = t == n_train - 1
            att1 = (
                f"enjoys rewatching {genre1} classics" if vary else f"loves {genre1} films"
            )
            turns = [
                user_turn(
                    f"I am in the mood for a {genre1} movie tonight. "
                    f"[[{genre1}::{att1}]] {FILLERS[(i + t) % len(FILLERS)]}"
                ),
                system_turn(
                    f"You might enjoy {_title(genre1, 0)} or {_title(genre1, 1)}.",
                    items=[_item_id(g1, 0), _item_id(g1, 1)],
                ),
                user_turn(
                    f"I watched {_title(genre2, 0)} last week and {a1} was terrific in it. "
                    f"[[{a1}::adores {a1}]] [[{genre2}::likes a good {genre2} now and then]] "
                    f"{FILLERS[(i + t + 2) % len(FILLERS)]}",
                    items=[_item_id(g2, 0)],
                ),
                system_turn(
                    f"Then {_title(genre2, 1)} could be a fit as well.",
                    items=[_item_id(g2, 1)],
                ),
                user_turn(
                    f"Please nothing in the {genre_d} lane though. "
                    f"[[{genre_d}::avoids {genre_d}]] [[{a2}::would watch anything with {a2}]] "
                    f"[[{a3}::thinks {a3} is overrated]] [[{extra}::appreciates {extra}]] "
                    f"{FILLERS[(i + t + 4) % len(FILLERS)]}"
                ),
                system_turn(
                    f"Noted, steering clear of {genre_d}. Maybe {_title(genre1, 2 + t)}?",
                    items=[_item_id(g1, 2 + t)],
                ),
            ]
            add_session(user_id, i, session_idx, turns)
            session_idx += 1

        # Valid sessions: plain conversations, no evaluation points.
        for _ in range(spec.n_valid):
            turns = [
                user_turn(
                    f"Quick one: something short and {genre2} adjacent? "
                    f"{FILLERS[session_idx % len(FILLERS)]}"
                ),
                system_turn(
                    f"{_title(genre2, 2)} fits that.", items=[_item_id(g2, 2)]
                ),
            ]
            add_session(user_id, i, session_idx, turns)
            session_idx += 1

        # Test session: the conversation names genre1 and two actors, all of
        # which live in the user's bank; the truth item co-occurs with the
        # mentioned lead item. Truth difficulty is staggered so ranks (and
        # hence the metrics) vary across points instead of all landing at 1.
        if i % 5 == 4:
            truth_item, truth_title = _item_id(g2, 1), _title(genre2, 1)  # other genre, ranks low
        elif i % 4 == 2:
            truth_item, truth_title = _item_id(g1, 2), _title(genre1, 2)  # second-best co-mention
        else:
            truth_item, truth_title = _item_id(g1, 1), _title(genre1, 1)  # strongest, ranks first
        test_turns = [
            user_turn(
                f"I rewatched {_title(genre1, 0)} yesterday and it still holds up. "
                f"I could go for another {genre1} tonight, ideally with {a1} or {a2}. "
                f"{FILLERS[i % len(FILLERS)]}",
                items=[_item_id(g1, 0)],
            ),
            system_turn(
                f"How about {truth_title}?",
                truth=[truth_item],
            ),
        ]
        # one planted duplicate-target point per third user: its truth was
        # already mentioned, so preprocessing must clear it
        if i % 3 == 0:
            test_turns.append(
                user_turn("Actually, remind me of the one I just mentioned?")
            )
            test_turns.append(
                system_turn(
                    f"That was {_title(genre1, 0)}.",
                    truth=[_item_id(g1, 0)],
                )
            )
        test_session = add_session(user_id, i, session_idx, test_turns)
        planted[f"{user_id}|{test_session}|2"] = {
            "entities": sorted([genre1, a1, a2]),
            "truth": [truth_item],
        }

    # Cold users: three sessions, all consumed by valid/test at split time,
    # so they own zero train sessions. Their test conversation mentions a
    # lead item whose genre-mate is the planted truth.
    for c in range(spec.n_cold):
        user_id = f"cold{c:02d}"
        cold_users.append(user_id)
        gi = (2 * c + 1) % 10
        genre = GENRES[gi]
        user_idx = spec.n_warm + c
        for session_idx in range(2):
            turns = [
                user_turn(
                    f"First time here. Mostly wondering what people watch these days. "
                    f"{FILLERS[(c + session_idx) % len(FILLERS)]}"
                ),
                system_turn("Happy to help once I know more about your taste."),
            ]
            add_session(user_id, user_idx, session_idx, turns)
        test_turns = [
            user_turn(
                f"I just finished {_title(genre, 0)} and loved every minute of it. "
                f"What should I queue up next? {FILLERS[c % len(FILLERS)]}",
                items=[_item_id(gi, 0)],
            ),
            system_turn(
                f"Viewers who liked that one often pick {_title(genre, 1)}.",
                truth=[_item_id(gi, 1)],
            ),
        ]
        test_session = add_session(user_id, user_idx, 2, test_turns)
        planted[f"{user_id}|{test_session}|2"] = {
            "entities": [],
            "truth": [_item_id(gi, 1)],
        }

    rng.shuffle(sessions)  # on-disk order carries no meaning

    sessions_path = out / "sessions.jsonl"
    catalog_path = out / "catalog.jsonl"
    planted_path = out / "planted.json"
    with open(sessions_path, "w", encoding="utf-8") as fh:
        for rec in sessions:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    with open(catalog_path, "w", encoding="utf-8") as fh:
        for rec in catalog:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    planted_path.write_text(
        json.dumps(
            {"points": planted, "cold_users": cold_users,
             "n_valid": spec.n_valid, "n_test": spec.n_test},
            ensure_ascii=False, sort_keys=True, indent=1,
        ),
        encoding="utf-8",
    )
    return {"sessions": sessions_path, "catalog": catalog_path, "planted": planted_path}
