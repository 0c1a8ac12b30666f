"""Source locations and the diagnostic/error hierarchy shared by all stages."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Span:
    """Half-open source region; line and col are 1-based."""

    file: str
    line: int
    col: int
    end_line: int = 0
    end_col: int = 0

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.col}"


class MmlError(Exception):
    """Base class for every diagnostic raised by the toolchain."""

    def __init__(self, message: str, span: Span | None = None):
        self.message = message
        self.span = span
        super().__init__(self.format())

    def format(self) -> str:
        if self.span is not None:
            return f"{self.span}: {self.message}"
        return self.message


class LexError(MmlError):
    """Unrecognized character or malformed literal."""


class ParseError(MmlError):
    """Token stream does not form a valid declaration."""


class CompileError(MmlError):
    """Semantic analysis failure: unresolved symbol, type mismatch, duplicate."""


class RuntimeDiagnostic(MmlError):
    """Simulation-time failure: non-finite value, stale handle, bad config."""
