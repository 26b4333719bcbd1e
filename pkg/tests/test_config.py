"""Key-value config parsing and port construction."""

import pytest

from memrec.config import AppConfig, parse_config_text
from memrec.general_memory import ExternalExpert
from memrec.llm import HttpLlm, MockLlm
from memrec.retrieval import HashNgramEmbedder, HttpEmbedder


def test_parse_ignores_comments_and_blanks():
    cfg = parse_config_text("""
# a comment
llm.kind = http

retrieval.q = 5
""")
    assert cfg == {"llm.kind": "http", "retrieval.q": "5"}


def test_parse_rejects_bare_lines():
    with pytest.raises(ValueError):
        parse_config_text("not a key value line")


def test_defaults_build_mock_ports():
    cfg = AppConfig()
    ports = cfg.make_ports()
    assert isinstance(ports.llm, MockLlm)
    assert isinstance(ports.embedder, HashNgramEmbedder)
    assert cfg.retrieval.q == 3
    assert cfg.list_length == 20
    assert cfg.candidate_count == 40


def test_http_ports_from_config():
    cfg = AppConfig(raw={
        "llm.kind": "http",
        "llm.endpoint": "http://llm.internal/v1",
        "llm.model": "router-large",
        "embedder.kind": "http",
        "embedder.endpoint": "http://emb.internal/v1",
        "embedder.model": "small-emb",
    })
    llm = cfg.make_llm()
    assert isinstance(llm, HttpLlm)
    assert llm.model == "router-large"
    assert llm.temperature == 0.0
    assert isinstance(cfg.make_embedder(), HttpEmbedder)


def test_external_expert_from_config(tmp_path):
    path = tmp_path / "candidates.jsonl"
    path.write_text('{"user_id": "u", "session_id": "s", "turn_index": 2, "candidates": ["a"]}\n')
    cfg = AppConfig(raw={"expert.kind": "external", "expert.candidates_file": str(path)})
    assert isinstance(cfg.make_expert(), ExternalExpert)


def test_unknown_kinds_rejected():
    with pytest.raises(ValueError):
        AppConfig(raw={"llm.kind": "quantum"}).make_llm()
    with pytest.raises(ValueError):
        AppConfig(raw={"embedder.kind": "psychic"}).make_embedder()


def test_bind_parsing():
    cfg = AppConfig(raw={"service.bind": "0.0.0.0:9001"})
    assert cfg.bind == ("0.0.0.0", 9001)
    assert AppConfig().bind == ("127.0.0.1", 8040)


def test_cors_origins_split():
    cfg = AppConfig(raw={"service.cors_origins": "http://a:1, http://b:2"})
    assert cfg.cors_origins == ["http://a:1", "http://b:2"]
