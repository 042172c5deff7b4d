"""Error type shared by all engine modules.

Every failure carries a stable machine-checkable code so tests and callers
can match on behaviour instead of message text.
"""

from __future__ import annotations


class EngineError(Exception):
    """Engine failure with a stable code (e.g. ``NON_DIVISIBLE_LENGTH``)."""

    def __init__(self, code: str, message: str) -> None:
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message
