"""Tokenizer for .mml sources."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .source import LexError, Span

KEYWORDS = frozenset({
    "type", "proc", "link", "when", "while", "with", "fill",
    "conc", "amount", "const", "site", "particle", "param", "enum",
})

# Longest puncts first so ** and <= win over * and <.
_PUNCTS = (
    "**", "<=", ">=", "==", "!=",
    "(", ")", "{", "}", "[", "]",
    ",", ";", ":", ".", "+", "-", "*", "/", "<", ">", "=",
)

_NUMBER_RE = re.compile(r"(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_STRING_RE = re.compile(r'"([^"\\]|\\.)*"')


@dataclass(frozen=True)
class Token:
    kind: str  # keyword | identifier | number | string | punct | arrow | eof
    text: str
    span: Span

    def __repr__(self) -> str:
        return f"Token({self.kind}, {self.text!r}, {self.span})"


def tokenize(source: str, filename: str = "<string>") -> list[Token]:
    """Split MML source into tokens.

    Whitespace and ``//`` comments are skipped; everything else must match a
    keyword, identifier, number, string, punct, or the ``->`` arrow.  Raises
    :class:`LexError` with a 1-based line/col span on the first bad character.
    """
    tokens: list[Token] = []
    pos = 0
    line = 1
    line_start = 0
    n = len(source)

    while pos < n:
        ch = source[pos]
        if ch == "\n":
            line += 1
            pos += 1
            line_start = pos
            continue
        if ch in " \t\r":
            pos += 1
            continue
        if source.startswith("//", pos):
            nl = source.find("\n", pos)
            pos = n if nl < 0 else nl
            continue

        col = pos - line_start + 1
        span = Span(filename, line, col)

        if source.startswith("->", pos):
            tokens.append(Token("arrow", "->", span))
            pos += 2
            continue

        m = _NUMBER_RE.match(source, pos)
        if m and (ch.isdigit() or (ch == "." and pos + 1 < n and source[pos + 1].isdigit())):
            text = m.group(0)
            value = float(text)
            if not math.isfinite(value):
                raise LexError(f"numeric literal out of range: {text}", span)
            tokens.append(Token("number", text, span))
            pos = m.end()
            continue

        m = _IDENT_RE.match(source, pos)
        if m:
            text = m.group(0)
            kind = "keyword" if text in KEYWORDS else "identifier"
            tokens.append(Token(kind, text, span))
            pos = m.end()
            continue

        m = _STRING_RE.match(source, pos)
        if m:
            tokens.append(Token("string", m.group(0), span))
            pos = m.end()
            continue

        for p in _PUNCTS:
            if source.startswith(p, pos):
                tokens.append(Token("punct", p, span))
                pos += len(p)
                break
        else:
            raise LexError(f"unrecognized character {ch!r}", span)

    return tokens
