"""Language-model ports, structured-output parsing, and the gateway call.

All model calls in the package go through :func:`complete`, which parses raw
completions into typed payloads and retries once with a repair suffix when
the model output is off-format. Two ports are provided: a deterministic
rule-driven mock for offline runs and tests, and an OpenAI-compatible HTTP
client.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import requests

from .errors import LlmUnavailable, ParseFailure

log = logging.getLogger(__name__)

REPAIR_SUFFIX = (
    "Your previous answer was not in the required format. "
    "Answer again with ONLY the required output, no extra prose."
)

REPLY_INSTRUCTION = "After the JSON list, write one short paragraph replying to the user."


class OutputKind(str, Enum):
    ENTITY_ATTITUDE_MAP = "entity-attitude-map"
    ENTITY_LIST = "entity-list"
    ITEM_LIST = "item-list"
    MERGED_ATTITUDE = "merged-attitude"
    GUIDELINE_SET = "guideline-set"


@dataclass(frozen=True)
class StructuredOutput:
    kind: OutputKind
    payload: object
    raw: str


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def first_json_value(text: str) -> str | None:
    """Slice of the first balanced JSON object/array in text, or None."""
    start = None
    for i, ch in enumerate(text):
        if ch in "[{":
            start = i
            break
    if start is None:
        return None
    depth = 0
    in_str = False
    esc = False
    for j in range(start, len(text)):
        ch = text[j]
        if in_str:
            if esc:
                esc = False
            elif ch == "\\":
                esc = True
            elif ch == '"':
                in_str = False
            continue
        if ch == '"':
            in_str = True
        elif ch in "[{":
            depth += 1
        elif ch in "]}":
            depth -= 1
            if depth == 0:
                return text[start : j + 1]
    return None


def _string_list(value: object, kind: OutputKind, raw: str, dedupe: bool) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(x, str) for x in value):
        raise ParseFailure(kind.value, raw)
    return list(dict.fromkeys(value)) if dedupe else list(value)


def parse_structured(raw: str, kind: OutputKind) -> StructuredOutput:
    """Parse a raw completion into the expected structure.

    Total over arbitrary input: returns a StructuredOutput or raises
    ParseFailure, never anything else.
    """
    if kind is OutputKind.MERGED_ATTITUDE:
        text = raw.strip()
        if not text:
            raise ParseFailure(kind.value, raw)
        return StructuredOutput(kind, text, raw)

    candidate = first_json_value(raw)
    if candidate is None:
        raise ParseFailure(kind.value, raw)
    try:
        value = json.loads(candidate)
    except json.JSONDecodeError:
        raise ParseFailure(kind.value, raw) from None

    if kind is OutputKind.ENTITY_ATTITUDE_MAP:
        if not isinstance(value, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in value.items()
        ):
            raise ParseFailure(kind.value, raw)
        return StructuredOutput(kind, dict(value), raw)
    if kind in (OutputKind.ENTITY_LIST, OutputKind.ITEM_LIST):
        return StructuredOutput(kind, _string_list(value, kind, raw, dedupe=True), raw)
    if kind is OutputKind.GUIDELINE_SET:
        return StructuredOutput(kind, _string_list(value, kind, raw, dedupe=False), raw)
    raise ParseFailure(kind.value, raw)


# ---------------------------------------------------------------------------
# Ports
# ---------------------------------------------------------------------------

class LanguageModelPort:
    """Raw completion transport. Only the gateway should call generate()."""

    calls: int = 0

    def generate(self, prompt: str, kind: OutputKind) -> str:
        raise NotImplementedError


# Gateway-side registry of raw calls, per kind. The audit test compares this
# against the ports' own counters to catch call sites bypassing complete().
CALL_REGISTRY: Counter = Counter()


def reset_call_registry() -> None:
    CALL_REGISTRY.clear()


def complete(
    port: LanguageModelPort,
    prompt: str,
    expected: OutputKind,
    retry_budget: int = 1,
) -> StructuredOutput:
    """Run one model call and parse it, retrying with a repair suffix."""
    raw = ""
    for attempt in range(retry_budget + 1):
        attempt_prompt = prompt if attempt == 0 else prompt + "\n\n" + REPAIR_SUFFIX
        CALL_REGISTRY[expected] += 1
        raw = port.generate(attempt_prompt, expected)
        try:
            return parse_structured(raw, expected)
        except ParseFailure:
            if attempt < retry_budget:
                log.warning("off-format %s output, retrying with repair suffix", expected.value)
    raise ParseFailure(expected.value, raw)


# ---------------------------------------------------------------------------
# Deterministic mock
# ---------------------------------------------------------------------------

ANNOTATION = re.compile(r"\[\[(.+?)::(.+?)\]\]")
MOCK_REFLECT_GUIDELINE = "Weigh the user's most recent feedback over older signals"
MOCK_REPLY = "Here are some picks that should match what you described."

# Opposite-polarity word pairs used by the mock merge rule.
_OPPOSITES = [
    ("like", "dislike"), ("likes", "dislikes"), ("liked", "disliked"),
    ("love", "hate"), ("loves", "hates"), ("loved", "hated"),
    ("enjoy", "avoid"), ("enjoys", "avoids"),
]

_WORD = re.compile(r"\w+", re.UNICODE)


def _tokens(text: str) -> set[str]:
    return set(_WORD.findall(text.casefold()))


def _labeled_json(prompt: str, label: str):
    idx = prompt.find(label)
    if idx < 0:
        return None
    candidate = first_json_value(prompt[idx + len(label):])
    if candidate is None:
        return None
    try:
        return json.loads(candidate)
    except json.JSONDecodeError:
        return None


def _labeled_line(prompt: str, label: str) -> str:
    m = re.search(re.escape(label) + r"[ \t]*(.*)", prompt)
    return m.group(1).strip() if m else ""


def _labeled_block(prompt: str, label: str) -> str:
    """Lines following the label up to the first blank line."""
    idx = prompt.find(label)
    if idx < 0:
        return ""
    rest = prompt[idx + len(label):]
    block, _, _ = rest.partition("\n\n")
    return block.strip()


def _overlap_rank(cands: list[str], reference: set[str]) -> list[str]:
    """Stable descending sort by number of shared word tokens."""
    scored = [(-len(_tokens(c) & reference), i, c) for i, c in enumerate(cands)]
    return [c for _, _, c in sorted(scored)]


class MockLlm(LanguageModelPort):
    """Rule-driven model double: pure function of (prompt, seed, stub table).

    Stubs are (regex, response) pairs checked in order; a response may be a
    string or a callable of the prompt. Without a stub hit, a per-kind
    default rule answers from what it can read back out of the prompt.
    """

    def __init__(
        self,
        stubs: list[tuple[str, str | Callable[[str], str]]] | None = None,
        seed: int = 0,
    ):
        self.stubs = list(stubs or [])
        self.seed = seed
        self.calls = 0

    def generate(self, prompt: str, kind: OutputKind) -> str:
        self.calls += 1
        for pattern, response in self.stubs:
            if re.search(pattern, prompt, re.S):
                return response(prompt) if callable(response) else response
        return self._default(prompt, kind)

    # -- default rules, one per template kind --------------------------------

    def _default(self, prompt: str, kind: OutputKind) -> str:
        if kind is OutputKind.ENTITY_ATTITUDE_MAP:
            return self._extract(prompt)
        if kind is OutputKind.ENTITY_LIST:
            return self._retrieve(prompt)
        if kind is OutputKind.MERGED_ATTITUDE:
            return self._merge(prompt)
        if kind is OutputKind.GUIDELINE_SET:
            return self._reflect(prompt)
        if kind is OutputKind.ITEM_LIST:
            return self._recommend(prompt)
        return prompt  # unknown kind: echo

    def _extract(self, prompt: str) -> str:
        pairs: dict[str, str] = {}
        for entity, attitude in ANNOTATION.findall(prompt):
            pairs[entity.strip()] = attitude.strip()
        return json.dumps(pairs, ensure_ascii=False)

    def _retrieve(self, prompt: str) -> str:
        candidates = _labeled_json(prompt, "Candidate entities:")
        if not isinstance(candidates, list):
            candidates = []
        m = re.search(r"[Ss]elect the (\d+) most relevant", prompt)
        q = int(m.group(1)) if m else 1
        conversation = _tokens(_labeled_block(prompt, "Conversation:"))
        ranked = _overlap_rank([c for c in candidates if isinstance(c, str)], conversation)
        return json.dumps(ranked[:q], ensure_ascii=False)

    def _merge(self, prompt: str) -> str:
        existing = _labeled_line(prompt, "Existing attitude:")
        new = _labeled_line(prompt, "New attitude:")
        if new == existing:
            return existing
        a, b = _tokens(existing), _tokens(new)
        for x, y in _OPPOSITES:
            if (x in a and y in b) or (y in a and x in b):
                return new
        return f"{existing}; {new}" if existing else new

    def _reflect(self, prompt: str) -> str:
        current = _labeled_json(prompt, "Current guidelines:")
        if not isinstance(current, list):
            current = []
        return json.dumps(list(current) + [MOCK_REFLECT_GUIDELINE], ensure_ascii=False)

    def _recommend(self, prompt: str) -> str:
        expert = _labeled_json(prompt, "Expert candidate items:")
        entities = _labeled_json(prompt, "Retrieved memory entities:")
        attitudes = _labeled_json(prompt, "Retrieved memory attitudes:")
        expert = [c for c in (expert or []) if isinstance(c, str)]
        entities = [c for c in (entities or []) if isinstance(c, str)]
        attitudes = [c for c in (attitudes or []) if isinstance(c, str)]
        m = re.search(r"top (\d+)", prompt)
        k = int(m.group(1)) if m else 20
        reference = _tokens(_labeled_block(prompt, "Conversation:"))
        reference |= _tokens(" ".join(entities + attitudes))
        # No expert block (collaborative knowledge ablated): fall back to the
        # memory entities themselves as item-title guesses.
        pool = expert if expert else entities
        ranked = _overlap_rank(pool, reference)[:k]
        out = json.dumps(ranked, ensure_ascii=False)
        if REPLY_INSTRUCTION in prompt:
            out += "\n" + MOCK_REPLY
        return out


def mock_program(
    stubs: dict[str, str | Callable[[str], str]] | None = None,
    seed: int = 0,
) -> MockLlm:
    """Build a MockLlm from a pattern->response stub table."""
    return MockLlm(stubs=list(stubs.items()) if stubs else [], seed=seed)


# ---------------------------------------------------------------------------
# OpenAI-compatible HTTP port
# ---------------------------------------------------------------------------

@dataclass
class HttpLlm(LanguageModelPort):
    endpoint: str  # base URL ending in /v1
    model: str
    api_key_env: str = "MEMREC_LLM_API_KEY"
    timeout: float = 60.0
    max_in_flight: int = 4
    temperature: float = 0.0  # decoding pinned to 0 for reproducibility
    _sem: threading.BoundedSemaphore = field(init=False, repr=False)

    def __post_init__(self):
        self.calls = 0
        self._sem = threading.BoundedSemaphore(self.max_in_flight)

    def generate(self, prompt: str, kind: OutputKind) -> str:
        self.calls += 1
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }
        url = self.endpoint.rstrip("/") + "/chat/completions"
        with self._sem:
            try:
                resp = requests.post(url, json=body, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                raise LlmUnavailable(str(exc)) from exc
        if resp.status_code != 200:
            raise LlmUnavailable(f"{url} returned {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError) as exc:
            raise LlmUnavailable(f"malformed completion response: {exc}") from exc
