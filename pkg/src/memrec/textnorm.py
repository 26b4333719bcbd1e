"""Text canonicalization helpers.

Two flavours are needed: entity keys (memory bank) keep punctuation, item
titles (catalog matching) strip it so that free-text model output can be
resolved against the catalog.
"""

from __future__ import annotations

import re
import unicodedata

_WS = re.compile(r"\s+")
# keep word chars (incl. CJK) and spaces; drop ASCII/unicode punctuation
_PUNCT = re.compile(r"[^\w\s]|_", re.UNICODE)


def canonical_entity(text: str) -> str:
    """NFC-normalize, case-fold, trim, and collapse internal whitespace."""
    text = unicodedata.normalize("NFC", text)
    return _WS.sub(" ", text.casefold().strip())


def canonical_title(text: str) -> str:
    """Like canonical_entity but additionally strips punctuation."""
    text = unicodedata.normalize("NFC", text)
    text = _PUNCT.sub(" ", text.casefold())
    return _WS.sub(" ", text).strip()
