"""Exception types shared across the package."""

from __future__ import annotations


class MemrecError(Exception):
    """Base class for all package-specific errors."""


class MalformedRecord(MemrecError):
    """A dataset line failed schema validation."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class DuplicateSessionId(MemrecError):
    def __init__(self, session_id: str):
        super().__init__(f"duplicate session_id {session_id!r}")
        self.session_id = session_id


class EntityNotFound(MemrecError):
    def __init__(self, entity: str):
        super().__init__(f"entity {entity!r} not in memory bank")
        self.entity = entity


class StoreIo(MemrecError):
    """Memory store could not be read or written."""


class CorruptRecord(MemrecError):
    """A persisted memory record could not be decoded."""


class LlmUnavailable(MemrecError):
    """The language-model transport failed."""


class ParseFailure(MemrecError):
    """Model output could not be parsed into the expected structure."""

    def __init__(self, kind: str, raw: str):
        preview = raw if len(raw) <= 200 else raw[:200] + "..."
        super().__init__(f"could not parse {kind} from completion: {preview!r}")
        self.kind = kind
        self.raw = raw


class MissingSlot(MemrecError):
    def __init__(self, name: str, template: str):
        super().__init__(f"slot {name!r} not bound for template {template!r}")
        self.slot = name
        self.template = template


class DimensionMismatch(MemrecError):
    def __init__(self, got: int, expected: int):
        super().__init__(f"vector dimension {got} != {expected}")


class MismatchedCuts(MemrecError):
    """Reports with different metric cut sets cannot be compared."""
