"""Recursive descent parser: token stream -> SyntaxTree.

The grammar is fixed by the exhibited corpus: declarations end with `;`
(optional after a closing brace), block bodies hold exactly one expression,
`**` binds tighter than unary minus and associates right.
"""

from __future__ import annotations

from .lexer import Token, tokenize
from .source import ParseError, Span
from .syntax import (
    Binary,
    Call,
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

# Keywords that double as built-in type names in type positions.
_TYPE_KEYWORDS = frozenset({"particle", "conc", "amount", "site", "enum"})

_COMPARISONS = ("<", ">", "<=", ">=", "==", "!=")


class Parser:
    def __init__(self, tokens: list[Token], filename: str = "<string>"):
        self.tokens = tokens
        self.pos = 0
        self.filename = filename
        self._eof_span = tokens[-1].span if tokens else Span(filename, 1, 1)

    # -- token access -------------------------------------------------------

    def _peek(self, offset: int = 0) -> Token | None:
        idx = self.pos + offset
        return self.tokens[idx] if idx < len(self.tokens) else None

    def _at(self, kind: str, text: str | None = None, offset: int = 0) -> bool:
        tok = self._peek(offset)
        if tok is None or tok.kind != kind:
            return False
        return text is None or tok.text == text

    def _advance(self) -> Token:
        tok = self._peek()
        if tok is None:
            raise ParseError("unexpected end of input", self._eof_span)
        self.pos += 1
        return tok

    def _expect(self, kind: str, text: str | None = None) -> Token:
        tok = self._peek()
        want = text if text is not None else kind
        if tok is None:
            raise ParseError(f"expected {want!r}, got end of input", self._eof_span)
        if tok.kind != kind or (text is not None and tok.text != text):
            raise ParseError(f"expected {want!r}, got {tok.text!r}", tok.span)
        self.pos += 1
        return tok

    def _accept(self, kind: str, text: str | None = None) -> Token | None:
        if self._at(kind, text):
            return self._advance()
        return None

    def _span(self) -> Span:
        tok = self._peek()
        return tok.span if tok is not None else self._eof_span

    # -- top level -----------------------------------------------------------

    def parse(self) -> SyntaxTree:
        decls = []
        while self._peek() is not None:
            decls.append(self._parse_declaration())
        return SyntaxTree(tuple(decls))

    def _parse_declaration(self, in_type_body: bool = False):
        tok = self._peek()
        assert tok is not None
        if tok.kind == "keyword":
            if tok.text == "type":
                return self._parse_type_decl()
            if tok.text == "proc":
                return self._parse_proc_decl()
            if tok.text == "link":
                return self._parse_link_decl()
            if tok.text == "param":
                return self._parse_param_decl()
            if tok.text == "fill":
                raise ParseError("fill requires a target (`name:fill(type=...)`)", tok.span)
        if tok.kind == "identifier":
            return self._parse_binding(in_type_body)
        raise ParseError(f"expected a declaration, got {tok.text!r}", tok.span)

    def _end_statement(self, after_brace: bool) -> None:
        # `;` is optional after a closing brace and may be elided just before
        # an enclosing `}` or end of input; mandatory otherwise.
        if self._accept("punct", ";"):
            return
        if after_brace or self._at("punct", "}") or self._peek() is None:
            return
        self._expect("punct", ";")

    # -- type declarations ----------------------------------------------------

    def _parse_type_decl(self) -> TypeDecl:
        span = self._span()
        self._expect("keyword", "type")
        name = self._expect("identifier").text
        base = None
        if self._accept("punct", ":"):
            base = self._expect_type_name()
        members: list = []
        had_body = False
        if self._accept("punct", "{"):
            had_body = True
            while not self._at("punct", "}"):
                members.append(self._parse_declaration(in_type_body=True))
            self._expect("punct", "}")
        self._end_statement(after_brace=had_body)
        return TypeDecl(name, base, tuple(members), span)

    def _expect_type_name(self) -> str:
        tok = self._peek()
        if tok is not None and (
            tok.kind == "identifier" or (tok.kind == "keyword" and tok.text in _TYPE_KEYWORDS)
        ):
            return self._advance().text
        raise ParseError(
            f"expected a type name, got {tok.text!r}" if tok else "expected a type name",
            self._span(),
        )

    # -- proc declarations ------------------------------------------------------

    def _parse_proc_decl(self) -> ProcDecl:
        span = self._span()
        self._expect("keyword", "proc")
        name = None
        if self._at("identifier") and self._at("punct", "(", offset=1):
            name = self._advance().text
        self._expect("punct", "(")
        inputs = self._parse_term_list(output=False)
        self._expect("punct", ")")
        self._expect("arrow")
        self._expect("punct", "(")
        outputs = self._parse_term_list(output=True)
        self._expect("punct", ")")
        if not inputs and not outputs:
            raise ParseError("empty transformation: a proc needs inputs or outputs", span)
        when = self._parse_predicate("when")
        while_ = self._parse_predicate("while")
        body = None
        had_body = False
        if self._at("punct", "{"):
            body = self._parse_block_body()
            had_body = True
        self._end_statement(after_brace=had_body)
        return ProcDecl(name, tuple(inputs), tuple(outputs), when, while_, body, span)

    def _parse_predicate(self, kw: str) -> Expr | None:
        if self._accept("keyword", kw):
            self._expect("punct", "(")
            expr = self._parse_expr()
            self._expect("punct", ")")
            return expr
        return None

    def _parse_block_body(self) -> Expr | None:
        self._expect("punct", "{")
        if self._at("punct", "}"):
            tok = self._advance()
            raise ParseError("empty body: a block must contain one expression", tok.span)
        expr = self._parse_expr()
        self._accept("punct", ";")
        self._expect("punct", "}")
        return expr

    def _parse_term_list(self, output: bool) -> list[OutTerm]:
        terms: list[OutTerm] = []
        if self._at("punct", ")"):
            return terms
        terms.append(self._parse_term(output))
        while self._accept("punct", ","):
            terms.append(self._parse_term(output))
        return terms

    def _parse_term(self, output: bool) -> OutTerm:
        span = self._span()
        if output and self._at("keyword", "link"):
            return self._parse_link_term()
        coef = 1
        if self._at("number"):
            tok = self._advance()
            if "." in tok.text or "e" in tok.text or "E" in tok.text:
                raise ParseError(
                    f"stoichiometric coefficient must be an exact positive integer, got {tok.text!r}",
                    tok.span,
                )
            coef = int(tok.text)
            if coef < 1:
                raise ParseError("stoichiometric coefficient must be >= 1", tok.span)
        binder = None
        path = None
        if self._at("identifier") and self._at("punct", ":", offset=1):
            binder = self._advance().text
            self._advance()  # ':'
            path = self._parse_path()
        elif self._at("identifier") or (self._peek() is not None and self._peek().kind == "keyword" and self._peek().text in _TYPE_KEYWORDS):
            path = self._parse_path()
        elif coef != 1:
            raise ParseError("expected a species name after coefficient", self._span())

        constraints: tuple = ()
        with_updates = None
        if (binder is not None or path is not None) and self._at("punct", "{"):
            self._advance()
            if self._at("keyword", "with"):
                if not output:
                    raise ParseError("`with` updates are only allowed in output terms", self._span())
                self._advance()
                with_updates = tuple(self._parse_assign_list())
            else:
                constraints = tuple(self._parse_assign_list())
            self._expect("punct", "}")
        if binder is None and path is None:
            raise ParseError(f"expected a term, got {self._span()}", self._span())
        # A bare `a{with ...}` output names the input binder via the path slot.
        if with_updates is not None and path is not None and binder is None and len(path.segments) == 1:
            binder = path.segments[0]
            path = None
        return Term(coef, binder, path, constraints, with_updates, span)

    def _parse_assign_list(self) -> list[tuple[str, Expr]]:
        pairs = [self._parse_assign()]
        while self._accept("punct", ","):
            pairs.append(self._parse_assign())
        return pairs

    def _parse_assign(self) -> tuple[str, Expr]:
        name = self._expect("identifier").text
        self._expect("punct", "=")
        return name, self._parse_expr()

    def _parse_link_term(self) -> LinkTerm:
        span = self._span()
        self._expect("keyword", "link")
        self._expect("punct", "(")
        sites = [self._parse_path()]
        while self._accept("punct", ","):
            sites.append(self._parse_path())
        self._expect("punct", ")")
        force = None
        if self._at("punct", "{"):
            force = self._parse_block_body()
        return LinkTerm(tuple(sites), force, span)

    # -- link declarations -----------------------------------------------------

    def _parse_link_decl(self) -> LinkDecl:
        span = self._span()
        self._expect("keyword", "link")
        self._expect("punct", "(")
        participants = [self._parse_term(output=False)]
        while self._accept("punct", ","):
            participants.append(self._parse_term(output=False))
        self._expect("punct", ")")
        if len(participants) < 2:
            raise ParseError("a link needs at least two participants", span)
        when = self._parse_predicate("when")
        while_ = self._parse_predicate("while")
        force = self._parse_block_body()
        self._end_statement(after_brace=True)
        return LinkDecl(tuple(participants), when, while_, force, span)

    # -- param declarations ------------------------------------------------------

    def _parse_param_decl(self) -> ParamDecl:
        span = self._span()
        self._expect("keyword", "param")
        name = self._expect("identifier").text
        default = None
        if self._accept("punct", "="):
            default = self._parse_expr()
        self._expect("punct", ";")
        return ParamDecl(name, default, span)

    # -- bindings: instances, fields, fills ---------------------------------------

    def _parse_binding(self, in_type_body: bool):
        span = self._span()
        path = self._parse_path()
        if not self._at("punct", ":"):
            # Anonymous instance: `MaterialRegion{...}`
            if self._at("punct", "{") and len(path.segments) == 1 and path.index is None:
                init = self._parse_initializer_from(path.segments[0])
                self._end_statement(after_brace=True)
                return InstanceDecl(None, init, span=span)
            raise ParseError(f"expected ':' after {path.dotted()!r}", self._span())
        self._advance()  # ':'

        if self._at("keyword", "fill"):
            type_init = self._parse_fill_value().fill_type()
            self._end_statement(after_brace=False)
            return FillDecl(path, type_init, span)

        init = self._parse_initializer()
        after_brace = bool(init.record) and init.type_name is not None
        self._end_statement(after_brace=after_brace)
        if in_type_body:
            if len(path.segments) != 1 or path.index is not None:
                raise ParseError("field names inside a type body cannot be dotted", span)
            return FieldDecl(path.segments[0], init, span)
        return InstanceDecl(path, init, span)

    def _expect_ident_text(self, text: str) -> None:
        tok = self._expect("identifier")
        if tok.text != text:
            raise ParseError(f"expected {text!r}, got {tok.text!r}", tok.span)

    def _parse_initializer(self) -> Initializer:
        span = self._span()
        const = self._accept("keyword", "const") is not None
        if self._at("keyword", "fill"):
            init = self._parse_fill_value()
            return Initializer(
                init.type_name, record=init.record, const=const, span=span
            )
        tok = self._peek()
        if tok is not None and (
            tok.kind == "identifier" or (tok.kind == "keyword" and tok.text in _TYPE_KEYWORDS)
        ):
            nxt = self._peek(1)
            if nxt is None or (nxt.kind == "punct" and nxt.text in ("(", "{", ";", ",", "}", ")")):
                self._advance()
                init = self._parse_initializer_from(tok.text, span)
                return init if not const else Initializer(
                    init.type_name, init.args, init.kwargs, init.record, const=True, span=span
                )
        value = self._parse_expr()
        return Initializer(value=value, const=const, span=span)

    def _parse_fill_value(self) -> Initializer:
        span = self._span()
        self._expect("keyword", "fill")
        self._expect("punct", "(")
        self._expect("keyword", "type")
        self._expect("punct", "=")
        type_init = self._parse_initializer()
        self._expect("punct", ")")
        return Initializer("fill", record=(("type", type_init),), span=span)

    def _parse_initializer_from(self, type_name: str, span: Span | None = None) -> Initializer:
        span = span or self._span()
        args: list[Expr] = []
        kwargs: list[tuple[str, Expr]] = []
        record: list[tuple[str, Initializer]] = []
        if self._accept("punct", "("):
            while not self._at("punct", ")"):
                if self._at("identifier") and self._at("punct", "=", offset=1):
                    name = self._advance().text
                    self._advance()
                    kwargs.append((name, self._parse_expr()))
                else:
                    if kwargs:
                        raise ParseError("positional argument after named argument", self._span())
                    args.append(self._parse_expr())
                if not self._accept("punct", ","):
                    break
            self._expect("punct", ")")
        elif self._accept("punct", "{"):
            while not self._at("punct", "}"):
                name = self._expect("identifier").text
                tok = self._peek()
                if tok is None or not (tok.kind == "punct" and tok.text in (":", "=")):
                    raise ParseError("expected ':' or '=' in record initializer", self._span())
                self._advance()
                record.append((name, self._parse_initializer()))
                if not (self._accept("punct", ",") or self._accept("punct", ";")):
                    break
            self._expect("punct", "}")
        return Initializer(type_name, tuple(args), tuple(kwargs), tuple(record), span=span)

    # -- expressions ------------------------------------------------------------

    def _parse_expr(self) -> Expr:
        return self._parse_comparison()

    def _parse_comparison(self) -> Expr:
        lhs = self._parse_additive()
        tok = self._peek()
        if tok is not None and tok.kind == "punct" and tok.text in _COMPARISONS:
            op = self._advance().text
            rhs = self._parse_additive()
            return Binary(op, lhs, rhs, tok.span)
        return lhs

    def _parse_additive(self) -> Expr:
        expr = self._parse_multiplicative()
        while True:
            tok = self._peek()
            if tok is not None and tok.kind == "punct" and tok.text in ("+", "-"):
                self._advance()
                rhs = self._parse_multiplicative()
                expr = Binary(tok.text, expr, rhs, tok.span)
            else:
                return expr

    def _parse_multiplicative(self) -> Expr:
        expr = self._parse_unary()
        while True:
            tok = self._peek()
            if tok is not None and tok.kind == "punct" and tok.text in ("*", "/"):
                self._advance()
                rhs = self._parse_unary()
                expr = Binary(tok.text, expr, rhs, tok.span)
            else:
                return expr

    def _parse_unary(self) -> Expr:
        tok = self._peek()
        if tok is not None and tok.kind == "punct" and tok.text == "-":
            self._advance()
            return Unary("-", self._parse_unary(), tok.span)
        return self._parse_power()

    def _parse_power(self) -> Expr:
        base = self._parse_atom()
        tok = self._peek()
        if tok is not None and tok.kind == "punct" and tok.text == "**":
            self._advance()
            # Right-associative; the exponent may start with unary minus.
            return Binary("**", base, self._parse_unary(), tok.span)
        return base

    def _parse_atom(self) -> Expr:
        tok = self._peek()
        if tok is None:
            raise ParseError("expected an expression, got end of input", self._eof_span)
        if tok.kind == "number":
            self._advance()
            return Literal(float(tok.text), tok.span)
        if tok.kind == "punct" and tok.text == "(":
            self._advance()
            expr = self._parse_expr()
            self._expect("punct", ")")
            return expr
        if tok.kind == "punct" and tok.text == "[":
            self._advance()
            elems = [self._parse_expr()]
            while self._accept("punct", ","):
                elems.append(self._parse_expr())
            self._expect("punct", "]")
            return VectorLit(tuple(elems), tok.span)
        if tok.kind == "identifier":
            if self._at("punct", "(", offset=1):
                name = self._advance().text
                self._advance()  # '('
                args: list[Expr] = []
                if not self._at("punct", ")"):
                    args.append(self._parse_expr())
                    while self._accept("punct", ","):
                        args.append(self._parse_expr())
                self._expect("punct", ")")
                return Call(name, tuple(args), tok.span)
            return self._parse_path()
        raise ParseError(f"expected an expression, got {tok.text!r}", tok.span)

    def _parse_path(self) -> PathExpr:
        span = self._span()
        tok = self._peek()
        if tok is None or not (
            tok.kind == "identifier" or (tok.kind == "keyword" and tok.text in _TYPE_KEYWORDS)
        ):
            raise ParseError(
                f"expected a name, got {tok.text!r}" if tok else "expected a name", span
            )
        segments = [self._advance().text]
        while self._at("punct", ".") and self._at("identifier", offset=1):
            self._advance()
            segments.append(self._advance().text)
        index = None
        if self._accept("punct", "["):
            index = self._expect("identifier").text
            self._expect("punct", "]")
        return PathExpr(tuple(segments), index, span)


def parse(source: str, filename: str = "<string>") -> SyntaxTree:
    """Parse MML source text into a syntax tree.

    Deterministic and total: returns exactly one tree or raises one error
    (LexError/ParseError); never a partial tree.
    """
    return Parser(tokenize(source, filename), filename).parse()
