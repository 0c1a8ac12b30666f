"""Stack-based expression IR.

Rate, probability, predicate and force bodies all compile to the same
linear instruction form and share one evaluator.  Leaf references
(symbols, dist(...), rand()) are externalized into numbered operand
slots by a caller-supplied resolver, so the evaluator works unchanged
whether the slots are filled with scalars or numpy arrays (one entry
per matched pair/particle).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Hashable

import numpy as np

from .source import CompileError
from .syntax import Binary, Call, Expr, Literal, PathExpr, Unary, VectorLit

# One-argument math callables evaluated inline.
_MATH1 = {
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
}
# Two-argument math callables.
_MATH2 = {
    "min": np.minimum,
    "max": np.maximum,
}

_BINOPS = {
    "+": "ADD",
    "-": "SUB",
    "*": "MUL",
    "/": "DIV",
    "**": "POW",
    "<": "LT",
    ">": "GT",
    "<=": "LE",
    ">=": "GE",
    "==": "EQ",
    "!=": "NE",
}


@dataclass(frozen=True)
class Program:
    """Compiled expression: postfix code plus operand slot descriptors."""

    code: tuple[tuple[str, object], ...]
    operands: tuple[Hashable, ...]

    def __str__(self) -> str:
        parts = []
        for op, arg in self.code:
            if op == "PUSH":
                parts.append(repr(arg))
            elif op == "LOAD":
                parts.append(f"@{arg}:{self.operands[arg]}")
            elif op in ("CALL1", "CALL2"):
                parts.append(str(arg))
            else:
                parts.append(op.lower())
        return " ".join(parts)


Resolver = Callable[[Expr], Hashable]


def compile_expr(expr: Expr, resolve: Resolver) -> Program:
    """Compile an expression; `resolve` maps each leaf reference (paths and
    non-math calls) to a hashable operand descriptor.  Identical descriptors
    share one slot."""
    code: list[tuple[str, object]] = []
    slots: dict[Hashable, int] = {}

    def load(node: Expr) -> None:
        desc = resolve(node)
        slot = slots.setdefault(desc, len(slots))
        code.append(("LOAD", slot))

    def emit(node: Expr) -> None:
        if isinstance(node, Literal):
            code.append(("PUSH", node.value))
        elif isinstance(node, Unary):
            emit(node.operand)
            code.append(("NEG", None))
        elif isinstance(node, Binary):
            emit(node.lhs)
            emit(node.rhs)
            code.append((_BINOPS[node.op], None))
        elif isinstance(node, Call) and node.func in _MATH1:
            if len(node.args) != 1:
                raise CompileError(f"{node.func}() takes one argument", node.span)
            emit(node.args[0])
            code.append(("CALL1", node.func))
        elif isinstance(node, Call) and node.func in _MATH2:
            if len(node.args) != 2:
                raise CompileError(f"{node.func}() takes two arguments", node.span)
            emit(node.args[0])
            emit(node.args[1])
            code.append(("CALL2", node.func))
        elif isinstance(node, (Call, PathExpr)):
            load(node)
        elif isinstance(node, VectorLit):
            raise CompileError(
                "a vector literal is only meaningful as a dist() argument", node.span
            )
        else:
            raise CompileError(f"cannot compile node {node!r}", getattr(node, "span", None))

    emit(expr)
    ordered = sorted(slots, key=slots.get)
    return Program(tuple(code), tuple(ordered))


def evaluate(program: Program, values):
    """Run the program with `values[i]` filling operand slot i.

    Slot values may be scalars or equally shaped numpy arrays; the result has
    the broadcast shape of the inputs.
    """
    stack = []
    push = stack.append
    for op, arg in program.code:
        if op == "PUSH":
            push(arg)
        elif op == "LOAD":
            push(values[arg])
        elif op == "NEG":
            stack[-1] = -stack[-1]
        elif op == "CALL1":
            stack[-1] = _MATH1[arg](stack[-1])
        elif op == "CALL2":
            b = stack.pop()
            stack[-1] = _MATH2[arg](stack[-1], b)
        else:
            b = stack.pop()
            a = stack.pop()
            if op == "ADD":
                push(a + b)
            elif op == "SUB":
                push(a - b)
            elif op == "MUL":
                push(a * b)
            elif op == "DIV":
                push(a / b)
            elif op == "POW":
                push(a**b)
            elif op == "LT":
                push(a < b)
            elif op == "GT":
                push(a > b)
            elif op == "LE":
                push(a <= b)
            elif op == "GE":
                push(a >= b)
            elif op == "EQ":
                push(a == b)
            elif op == "NE":
                push(a != b)
            else:
                raise ValueError(f"bad opcode {op}")
    assert len(stack) == 1
    return stack[0]
