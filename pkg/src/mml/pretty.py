"""Canonical text emission for syntax trees.

format_tree(parse(src)) reparses to a tree structurally equal to the
original (spans excluded), which is what the round-trip tests check.
"""

from __future__ import annotations

from .syntax import (
    Binary,
    Call,
    Declaration,
    Expr,
    FieldDecl,
    FillDecl,
    Initializer,
    InstanceDecl,
    LinkDecl,
    LinkTerm,
    Literal,
    OutTerm,
    ParamDecl,
    PathExpr,
    ProcDecl,
    SyntaxTree,
    Term,
    TypeDecl,
    Unary,
    VectorLit,
)

_ATOM = 7
_POWER = 5
_UNARY = 4
_MUL = 3
_ADD = 2
_CMP = 1


def _prec(expr: Expr) -> int:
    if isinstance(expr, Binary):
        if expr.op == "**":
            return _POWER
        if expr.op in ("*", "/"):
            return _MUL
        if expr.op in ("+", "-"):
            return _ADD
        return _CMP
    if isinstance(expr, Unary):
        return _UNARY
    return _ATOM


def _wrap(expr: Expr, min_prec: int) -> str:
    text = format_expr(expr)
    return f"({text})" if _prec(expr) < min_prec else text


def format_expr(expr: Expr) -> str:
    if isinstance(expr, Literal):
        if expr.value == int(expr.value) and abs(expr.value) < 1e16:
            return str(int(expr.value))
        return repr(expr.value)
    if isinstance(expr, PathExpr):
        return expr.dotted()
    if isinstance(expr, Call):
        return f"{expr.func}({', '.join(format_expr(a) for a in expr.args)})"
    if isinstance(expr, VectorLit):
        return f"[{', '.join(format_expr(e) for e in expr.elements)}]"
    if isinstance(expr, Unary):
        return f"-{_wrap(expr.operand, _UNARY)}"
    if isinstance(expr, Binary):
        if expr.op == "**":
            return f"{_wrap(expr.lhs, _ATOM)} ** {_wrap(expr.rhs, _UNARY)}"
        if expr.op in ("*", "/"):
            return f"{_wrap(expr.lhs, _MUL)} {expr.op} {_wrap(expr.rhs, _UNARY)}"
        if expr.op in ("+", "-"):
            return f"{_wrap(expr.lhs, _ADD)} {expr.op} {_wrap(expr.rhs, _MUL)}"
        return f"{_wrap(expr.lhs, _ADD)} {expr.op} {_wrap(expr.rhs, _ADD)}"
    raise TypeError(f"not an expression node: {expr!r}")


def _format_assigns(pairs) -> str:
    return ", ".join(f"{name}={format_expr(value)}" for name, value in pairs)


def format_term(term: OutTerm) -> str:
    if isinstance(term, LinkTerm):
        text = f"link({', '.join(format_expr(s) for s in term.sites)})"
        if term.force is not None:
            text += f"{{{format_expr(term.force)}}}"
        return text
    parts = []
    if term.coef != 1:
        parts.append(f"{term.coef} ")
    if term.binder is not None and term.path is not None:
        parts.append(f"{term.binder}:{format_expr(term.path)}")
    elif term.path is not None:
        parts.append(format_expr(term.path))
    else:
        parts.append(term.binder or "")
    if term.with_updates is not None:
        parts.append(f"{{with {_format_assigns(term.with_updates)}}}")
    elif term.constraints:
        parts.append(f"{{{_format_assigns(term.constraints)}}}")
    return "".join(parts)


def format_initializer(init: Initializer) -> str:
    const = "const " if init.const else ""
    if init.value is not None:
        return const + format_expr(init.value)
    if init.is_fill:
        return f"{const}fill(type={format_initializer(init.fill_type())})"
    text = init.type_name or ""
    if init.args or init.kwargs:
        pieces = [format_expr(a) for a in init.args]
        pieces += [f"{name}={format_expr(v)}" for name, v in init.kwargs]
        text += f"({', '.join(pieces)})"
    elif init.record:
        entries = "; ".join(f"{name}: {format_initializer(v)}" for name, v in init.record)
        text += f"{{{entries}}}"
    return const + text


def format_declaration(decl: Declaration, indent: int = 0) -> str:
    pad = " " * indent
    if isinstance(decl, TypeDecl):
        head = f"{pad}type {decl.name}"
        if decl.base is not None:
            head += f" : {decl.base}"
        if decl.members:
            inner = "\n".join(format_declaration(m, indent + 4) for m in decl.members)
            return f"{head} {{\n{inner}\n{pad}}};"
        return head + ";"
    if isinstance(decl, FieldDecl):
        return f"{pad}{decl.name}: {format_initializer(decl.init)};"
    if isinstance(decl, ParamDecl):
        if decl.default is not None:
            return f"{pad}param {decl.name} = {format_expr(decl.default)};"
        return f"{pad}param {decl.name};"
    if isinstance(decl, ProcDecl):
        name = decl.name or ""
        text = f"{pad}proc {name}({', '.join(format_term(t) for t in decl.inputs)})"
        text += f" -> ({', '.join(format_term(t) for t in decl.outputs)})"
        if decl.when is not None:
            text += f" when({format_expr(decl.when)})"
        if decl.while_ is not None:
            text += f" while({format_expr(decl.while_)})"
        if decl.body is not None:
            text += f" {{{format_expr(decl.body)}}}"
        return text + ";"
    if isinstance(decl, LinkDecl):
        text = f"{pad}link({', '.join(format_term(t) for t in decl.participants)})"
        if decl.when is not None:
            text += f" when({format_expr(decl.when)})"
        if decl.while_ is not None:
            text += f" while({format_expr(decl.while_)})"
        return text + f" {{{format_expr(decl.force)}}};"
    if isinstance(decl, FillDecl):
        return f"{pad}{format_expr(decl.target)}: fill(type={format_initializer(decl.type_init)});"
    if isinstance(decl, InstanceDecl):
        if decl.target is None:
            return f"{pad}{format_initializer(decl.init)};"
        return f"{pad}{format_expr(decl.target)}: {format_initializer(decl.init)};"
    raise TypeError(f"not a declaration node: {decl!r}")


def format_tree(tree: SyntaxTree) -> str:
    return "\n".join(format_declaration(d) for d in tree.declarations) + "\n"
