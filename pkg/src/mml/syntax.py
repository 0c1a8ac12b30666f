"""Syntax tree node definitions.

Spans never participate in equality, so two parses of structurally identical
source compare equal even when whitespace differs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .source import Span

_NOSPAN = Span("<none>", 0, 0)


def _span_field():
    return field(default=_NOSPAN, compare=False, repr=False)


# ---------------------------------------------------------------------------
# Expressions


@dataclass(frozen=True)
class Literal:
    value: float
    span: Span = _span_field()


@dataclass(frozen=True)
class PathExpr:
    """Dotted reference, optionally with a terminal bracket index.

    A bare symbol is a one-segment path; `BoundingPlanes[FLOOR]` carries
    index="FLOOR".
    """

    segments: tuple[str, ...]
    index: Optional[str] = None
    span: Span = _span_field()

    def dotted(self) -> str:
        text = ".".join(self.segments)
        if self.index is not None:
            text += f"[{self.index}]"
        return text


@dataclass(frozen=True)
class Unary:
    op: str  # '-'
    operand: "Expr"
    span: Span = _span_field()


@dataclass(frozen=True)
class Binary:
    op: str  # + - * / ** < > <= >= == !=
    lhs: "Expr"
    rhs: "Expr"
    span: Span = _span_field()


@dataclass(frozen=True)
class Call:
    func: str  # dist, exp, rand, or user function
    args: tuple["Expr", ...]
    span: Span = _span_field()


@dataclass(frozen=True)
class VectorLit:
    elements: tuple["Expr", ...]
    span: Span = _span_field()


Expr = Union[Literal, PathExpr, Unary, Binary, Call, VectorLit]


# ---------------------------------------------------------------------------
# Initializers (right-hand side of `name : ...` bindings)


@dataclass(frozen=True)
class Initializer:
    """Typed constructor (`particle(0,0,0,mass=1)`, `Sphere{radius:5}`,
    `conc(5.0)`, bare `conc`) or a plain value (`radius:1`, `origin:[0,0,2.5]`).

    Plain values have type_name None and the expression in `value`.  A
    `fill(type=T)` value is stored as type_name "fill" with T under the
    "type" record key; "fill" is a keyword, so no user type collides.
    """

    type_name: Optional[str] = None
    args: tuple[Expr, ...] = ()
    kwargs: tuple[tuple[str, Expr], ...] = ()
    record: tuple[tuple[str, "Initializer"], ...] = ()
    value: Optional[Expr] = None
    const: bool = False
    span: Span = _span_field()

    @property
    def is_fill(self) -> bool:
        return self.type_name == "fill"

    def fill_type(self) -> "Initializer":
        assert self.is_fill and self.record and self.record[0][0] == "type"
        return self.record[0][1]


# ---------------------------------------------------------------------------
# Process terms


@dataclass(frozen=True)
class Term:
    """One input or output of a proc.

    `2 Y` -> coef 2, path Y.  `a:solvent.CXC` -> binder a, path solvent.CXC.
    `a:A{activated=Inactive}` adds pattern constraints; output terms may carry
    `with` updates instead.
    """

    coef: int = 1
    binder: Optional[str] = None
    path: Optional[PathExpr] = None
    constraints: tuple[tuple[str, Expr], ...] = ()
    with_updates: Optional[tuple[tuple[str, Expr], ...]] = None
    span: Span = _span_field()


@dataclass(frozen=True)
class LinkTerm:
    """`link(a.s1, b.s2){force}` appearing in a proc output list."""

    sites: tuple[PathExpr, ...]
    force: Optional[Expr] = None
    span: Span = _span_field()


OutTerm = Union[Term, LinkTerm]


# ---------------------------------------------------------------------------
# Declarations


@dataclass(frozen=True)
class FieldDecl:
    name: str
    init: Initializer
    span: Span = _span_field()

    @property
    def const(self) -> bool:
        return self.init.const


@dataclass(frozen=True)
class ProcDecl:
    name: Optional[str]
    inputs: tuple[Term, ...]
    outputs: tuple[OutTerm, ...]
    when: Optional[Expr] = None
    while_: Optional[Expr] = None
    body: Optional[Expr] = None
    span: Span = _span_field()


@dataclass(frozen=True)
class LinkDecl:
    participants: tuple[Term, ...]
    when: Optional[Expr] = None
    while_: Optional[Expr] = None
    force: Optional[Expr] = None
    span: Span = _span_field()


@dataclass(frozen=True)
class InstanceDecl:
    """`a:particle(0,0,0,mass=1);`, `mycell.body.Rho:conc(1.5);`, or an
    anonymous `MaterialRegion{...}` (target None)."""

    target: Optional[PathExpr]
    init: Initializer
    span: Span = _span_field()

    @property
    def const(self) -> bool:
        return self.init.const


@dataclass(frozen=True)
class FillDecl:
    """`solvent:fill(type=Water);` / `body:fill(type=FluidParticle{radius=5});`"""

    target: Optional[PathExpr]
    type_init: Initializer
    span: Span = _span_field()


@dataclass(frozen=True)
class ParamDecl:
    name: str
    default: Optional[Expr] = None
    span: Span = _span_field()


Member = Union[FieldDecl, ProcDecl, LinkDecl, FillDecl]


@dataclass(frozen=True)
class TypeDecl:
    name: str
    base: Optional[str]
    members: tuple[Member, ...]
    span: Span = _span_field()


Declaration = Union[TypeDecl, ProcDecl, LinkDecl, InstanceDecl, FillDecl, ParamDecl]


@dataclass(frozen=True)
class SyntaxTree:
    declarations: tuple[Declaration, ...]
    span: Span = _span_field()
