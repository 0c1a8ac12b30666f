"""Mechanica Modeling Language: compiler and mesh-free simulation engine."""

from .source import CompileError, LexError, MmlError, ParseError, Span
from .lexer import Token, tokenize
from .parser import parse
from .pretty import format_tree

__version__ = "0.1.0"

__all__ = [
    "CompileError",
    "LexError",
    "MmlError",
    "ParseError",
    "Span",
    "Token",
    "tokenize",
    "parse",
    "format_tree",
    "__version__",
]
