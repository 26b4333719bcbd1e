"""Shared fixtures: tiny hand-built corpora and the bundled synthetic one."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest

from memrec.config import AppConfig
from memrec.dialogue import (
    DialogueSession,
    Speaker,
    Utterance,
    chronological_split,
    filter_duplicate_targets,
    load_corpus,
)
from memrec.llm import MockLlm
from memrec.prompts import load_templates
from memrec.synth import SynthSpec, generate

BASE_TIME = datetime(2024, 3, 1, tzinfo=timezone.utc)


def make_utterance(i: int, speaker: str, text: str, items=(), truth=()) -> Utterance:
    return Utterance(
        turn_index=i,
        speaker=Speaker(speaker),
        text=text,
        mentioned_items=tuple(items),
        ground_truth_items=tuple(truth),
    )


def make_session(session_id: str, user_id: str, turns, offset_hours: int = 0) -> DialogueSession:
    return DialogueSession(
        session_id=session_id,
        user_id=user_id,
        session_time=BASE_TIME + timedelta(hours=offset_hours),
        utterances=tuple(turns),
    )


@pytest.fixture(scope="session")
def templates():
    return load_templates()


@pytest.fixture
def mock_llm():
    return MockLlm()


@pytest.fixture(scope="session")
def synth_paths(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    return generate(out, SynthSpec())


@pytest.fixture(scope="session")
def synth_corpus(synth_paths):
    corpus = load_corpus(synth_paths["sessions"], synth_paths["catalog"])
    corpus = filter_duplicate_targets(corpus)
    return chronological_split(corpus, n_valid=2, n_test=1)


@pytest.fixture(scope="session")
def app_config():
    return AppConfig()
