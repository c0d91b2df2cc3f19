"""Lexer, parser and pretty-printer for the SODA-style stencil DSL.

A program is line oriented, one declaration per line::

    kernel: blur
    unroll factor: 16
    iterate factor: 1
    input float: image(3000, *)
    local float: blur_x(0, 0) = (image(0, 0) + image(1, 0) + image(2, 0)) / 3
    output float: blur_y(0, 0) = (blur_x(0, 0) + blur_x(0, 1) + blur_x(0, 2)) / 3

The formal grammar lives in ``docs/grammar.ebnf``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

from .errors import PositionedError

MAX_RANK = 3
MAX_NESTING = 200

ELEM_TYPES = {"int32": 32, "int64": 64, "float32": 32, "float64": 64}
TYPE_ALIASES = {
    "int": "int32",
    "long": "int64",
    "float": "float32",
    "double": "float64",
    **{name: name for name in ELEM_TYPES},
}

KEYWORDS = {
    "kernel": "KW_KERNEL",
    "unroll": "KW_UNROLL",
    "iterate": "KW_ITERATE",
    "factor": "KW_FACTOR",
    "input": "KW_INPUT",
    "local": "KW_LOCAL",
    "output": "KW_OUTPUT",
}

PUNCT = {
    ":": "COLON",
    ",": "COMMA",
    "(": "LPAREN",
    ")": "RPAREN",
    "=": "EQUALS",
    "+": "PLUS",
    "-": "MINUS",
    "*": "STAR",
    "/": "SLASH",
}


class UnexpectedCharacter(PositionedError):
    pass


class DSLSyntaxError(PositionedError):
    def __init__(self, message, line=None, col=None, expected=()):
        self.expected = tuple(sorted(set(expected)))
        if self.expected:
            message = f"{message} (expected one of: {', '.join(self.expected)})"
        super().__init__(message, line, col)


class SemanticError(PositionedError):
    """Well-formed but meaningless program. ``kind`` is a stable short tag."""

    def __init__(self, kind, message, line=None, col=None):
        self.kind = kind
        super().__init__(message, line, col)


def is_float_type(elem_type: str) -> bool:
    return elem_type.startswith("float")


def type_bits(elem_type: str) -> int:
    return ELEM_TYPES[elem_type]


# --------------------------------------------------------------------------
# tokens

@dataclass(frozen=True)
class Token:
    kind: str
    value: object
    line: int
    col: int

    def __repr__(self):
        if self.value is None:
            return self.kind
        return f"{self.kind}({self.value!r})"


_NUMBER = re.compile(r"([0-9]+\.[0-9]*|\.[0-9]+|[0-9]+)([eE][+-]?[0-9]+)?")
_DIGITS = frozenset("0123456789")
# identifiers are ASCII only; str.isalpha would also accept letters like 'é'
_WORD_START = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def tokenize(source: str) -> list[Token]:
    """Split DSL text into tokens. Comments start with ``#`` and run to end of line.

    A ``-`` directly followed by a digit lexes as part of an integer literal when it
    opens an argument (after ``(`` or ``,``), so ``f(0, -1)`` yields ``INT(-1)``.
    """
    tokens: list[Token] = []
    for lineno, text in enumerate(source.split("\n"), start=1):
        if text.endswith("\r"):
            text = text[:-1]
        pos = 0
        emitted = False
        while pos < len(text):
            ch = text[pos]
            col = pos + 1
            if ch in " \t":
                pos += 1
                continue
            if ch == "#":
                break
            negative = (
                ch == "-"
                and pos + 1 < len(text)
                and text[pos + 1] in _DIGITS
                and tokens
                and emitted
                and tokens[-1].kind in ("LPAREN", "COMMA")
            )
            if ch in _DIGITS or negative or (ch == "." and pos + 1 < len(text) and text[pos + 1] in _DIGITS):
                start = pos + 1 if negative else pos
                m = _NUMBER.match(text, start)
                lexeme = m.group(0)
                pos = m.end()
                if pos < len(text) and (text[pos] in _WORD_START or text[pos] in _DIGITS or text[pos] == "."):
                    raise UnexpectedCharacter(f"unexpected character {text[pos]!r} after number", lineno, pos + 1)
                sign = "-" if negative else ""
                if "." in lexeme or "e" in lexeme or "E" in lexeme:
                    tokens.append(Token("FLOAT", Fraction(sign + lexeme), lineno, col))
                else:
                    tokens.append(Token("INT", int(sign + lexeme), lineno, col))
                emitted = True
                continue
            if ch in _WORD_START:
                m = _IDENT.match(text, pos)
                word = m.group(0)
                pos = m.end()
                kind = KEYWORDS.get(word)
                if kind is None:
                    tokens.append(Token("IDENT", word, lineno, col))
                else:
                    tokens.append(Token(kind, None, lineno, col))
                emitted = True
                continue
            kind = PUNCT.get(ch)
            if kind is None:
                raise UnexpectedCharacter(f"unexpected character {ch!r}", lineno, col)
            tokens.append(Token(kind, None, lineno, col))
            emitted = True
            pos += 1
        if emitted:
            tokens.append(Token("NEWLINE", None, lineno, len(text) + 1))
    # the final line break is implicit
    if tokens and tokens[-1].kind == "NEWLINE":
        last = tokens.pop()
        tokens.append(Token("EOF", None, last.line, last.col))
    else:
        tokens.append(Token("EOF", None, 1, 1))
    return tokens


# --------------------------------------------------------------------------
# expression AST

@dataclass(frozen=True)
class Num:
    value: Fraction
    float_literal: bool = field(default=False, compare=False)  # spelled with a point or exponent


@dataclass(frozen=True)
class Tap:
    array: str
    offsets: tuple[int, ...]
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


Expr = Union[Num, Tap, Neg, BinOp]


def taps(expr: Expr) -> list[Tap]:
    """All tap references in left-to-right order (duplicates kept)."""
    out: list[Tap] = []
    stack = [expr]
    while stack:
        node = stack.pop()
        if isinstance(node, Tap):
            out.append(node)
        elif isinstance(node, Neg):
            stack.append(node.operand)
        elif isinstance(node, BinOp):
            stack.append(node.right)
            stack.append(node.left)
    return out


def rename_arrays(expr: Expr, mapping: dict[str, str]) -> Expr:
    if isinstance(expr, Tap):
        return Tap(mapping.get(expr.array, expr.array), expr.offsets, expr.line, expr.col)
    if isinstance(expr, Neg):
        return Neg(rename_arrays(expr.operand, mapping))
    if isinstance(expr, BinOp):
        return BinOp(expr.op, rename_arrays(expr.left, mapping), rename_arrays(expr.right, mapping), expr.line, expr.col)
    return expr


def _trunc_div(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def fold(expr: Expr, integer: bool) -> Expr:
    """Fold constant subtrees. Integer stages use C semantics (truncating division)."""
    if isinstance(expr, Neg):
        inner = fold(expr.operand, integer)
        if isinstance(inner, Num):
            return Num(-inner.value)
        return Neg(inner)
    if isinstance(expr, BinOp):
        left = fold(expr.left, integer)
        right = fold(expr.right, integer)
        if expr.op == "/" and isinstance(right, Num) and right.value == 0:
            raise SemanticError("division-by-zero", "division by literal zero", expr.line, expr.col)
        if isinstance(left, Num) and isinstance(right, Num):
            a, b = left.value, right.value
            if expr.op == "+":
                return Num(a + b)
            if expr.op == "-":
                return Num(a - b)
            if expr.op == "*":
                return Num(a * b)
            if integer:
                return Num(Fraction(_trunc_div(int(a), int(b))))
            return Num(a / b)
        return BinOp(expr.op, left, right, expr.line, expr.col)
    return expr


# --------------------------------------------------------------------------
# program structure

@dataclass(frozen=True)
class ArrayDecl:
    name: str
    elem_type: str
    tile_shape: tuple[int | None, ...]  # None marks an unbounded trailing extent

    @property
    def rank(self) -> int:
        return len(self.tile_shape)


@dataclass(frozen=True)
class StageDecl:
    name: str
    elem_type: str
    expr: Expr
    rank: int
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class StencilProgram:
    kernel_name: str
    unroll_factor: int
    iterate_factor: int
    inputs: tuple[ArrayDecl, ...]
    locals: tuple[StageDecl, ...]
    outputs: tuple[StageDecl, ...]

    @property
    def tile_shape(self) -> tuple[int | None, ...]:
        return self.inputs[0].tile_shape

    @property
    def tile_width(self) -> int:
        return self.inputs[0].tile_shape[0]

    @property
    def rank(self) -> int:
        return len(self.tile_shape)

    @property
    def stages(self) -> tuple[StageDecl, ...]:
        return self.locals + self.outputs

    @property
    def output(self) -> StageDecl:
        return self.outputs[0]

    def elem_type_of(self, name: str) -> str:
        for decl in self.inputs:
            if decl.name == name:
                return decl.elem_type
        for stage in self.stages:
            if stage.name == name:
                return stage.elem_type
        raise KeyError(name)


# --------------------------------------------------------------------------
# parser

class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0
        self.depth = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def expect(self, *kinds: str) -> Token:
        tok = self.peek()
        if tok.kind not in kinds:
            raise DSLSyntaxError(f"unexpected {_describe(tok)}", tok.line, tok.col, kinds)
        return self.advance()

    def end_of_line(self):
        self.expect("NEWLINE", "EOF")

    # header ----------------------------------------------------------
    def parse_program(self) -> StencilProgram:
        while self.peek().kind == "NEWLINE":
            self.advance()
        self.expect("KW_KERNEL")
        self.expect("COLON")
        name = self.expect("IDENT").value
        self.end_of_line()

        unroll = iterate = None
        inputs: list[tuple[ArrayDecl, Token]] = []
        stages: list[tuple[str, str, tuple[int, ...], Expr, Token]] = []
        while True:
            tok = self.peek()
            if tok.kind == "EOF":
                break
            if tok.kind == "NEWLINE":
                self.advance()
                continue
            if tok.kind in ("KW_UNROLL", "KW_ITERATE"):
                if inputs or stages:
                    raise DSLSyntaxError("factors must precede declarations", tok.line, tok.col)
                self.advance()
                self.expect("KW_FACTOR")
                self.expect("COLON")
                value_tok = self.expect("INT")
                if value_tok.value < 1:
                    raise SemanticError("bad-factor", "factor must be a positive integer", value_tok.line, value_tok.col)
                if tok.kind == "KW_UNROLL":
                    if unroll is not None:
                        raise SemanticError("duplicate", "unroll factor given twice", tok.line, tok.col)
                    unroll = value_tok.value
                else:
                    if iterate is not None:
                        raise SemanticError("duplicate", "iterate factor given twice", tok.line, tok.col)
                    iterate = value_tok.value
                self.end_of_line()
            elif tok.kind == "KW_INPUT":
                if stages:
                    raise DSLSyntaxError("inputs must precede local/output declarations", tok.line, tok.col)
                inputs.append((self.parse_input(), tok))
            elif tok.kind in ("KW_LOCAL", "KW_OUTPUT"):
                stages.append(self.parse_stage())
            else:
                raise DSLSyntaxError(
                    f"unexpected {_describe(tok)}", tok.line, tok.col,
                    ("KW_UNROLL", "KW_ITERATE", "KW_INPUT", "KW_LOCAL", "KW_OUTPUT", "EOF"),
                )
        return _check(name, unroll or 1, iterate or 1, inputs, stages, self.peek())

    def parse_type(self) -> str:
        tok = self.expect("IDENT")
        canonical = TYPE_ALIASES.get(tok.value)
        if canonical is None:
            raise SemanticError("bad-type", f"unsupported element type {tok.value!r}", tok.line, tok.col)
        return canonical

    def parse_input(self) -> ArrayDecl:
        self.expect("KW_INPUT")
        elem_type = self.parse_type()
        self.expect("COLON")
        name_tok = self.expect("IDENT")
        self.expect("LPAREN")
        extents: list[int | None] = []
        while True:
            tok = self.expect("INT", "STAR")
            if tok.kind == "STAR":
                extents.append(None)
            else:
                if tok.value < 1:
                    raise SemanticError("bad-extent", "tile extents must be positive", tok.line, tok.col)
                extents.append(tok.value)
            if self.expect("COMMA", "RPAREN").kind == "RPAREN":
                break
        self.end_of_line()
        if extents[0] is None:
            raise SemanticError("bad-extent", "the first extent (tile width) must be concrete", name_tok.line, name_tok.col)
        if None in extents[:-1]:
            raise SemanticError("bad-extent", "only the last extent may be unbounded", name_tok.line, name_tok.col)
        if len(extents) > MAX_RANK:
            raise SemanticError("rank", f"rank {len(extents)} exceeds the supported maximum of {MAX_RANK}", name_tok.line, name_tok.col)
        return ArrayDecl(name_tok.value, elem_type, tuple(extents))

    def parse_stage(self):
        kw = self.advance()
        kind = "local" if kw.kind == "KW_LOCAL" else "output"
        elem_type = self.parse_type()
        self.expect("COLON")
        name_tok = self.expect("IDENT")
        origin = self.parse_offsets()
        if any(origin):
            raise SemanticError("bad-origin", "a stage must be defined at the origin, e.g. name(0, 0)", name_tok.line, name_tok.col)
        self.expect("EQUALS")
        expr = self.parse_expr()
        self.end_of_line()
        return kind, elem_type, (name_tok.value, len(origin)), expr, name_tok

    def parse_offsets(self) -> tuple[int, ...]:
        self.expect("LPAREN")
        values = []
        while True:
            values.append(self.expect("INT").value)
            if self.expect("COMMA", "RPAREN").kind == "RPAREN":
                return tuple(values)

    # expressions -----------------------------------------------------
    def parse_expr(self) -> Expr:
        self.depth += 1
        if self.depth > MAX_NESTING:
            tok = self.peek()
            raise DSLSyntaxError("expression nested too deeply", tok.line, tok.col)
        try:
            node = self.parse_term()
            while self.peek().kind in ("PLUS", "MINUS"):
                tok = self.advance()
                node = BinOp("+" if tok.kind == "PLUS" else "-", node, self.parse_term(), tok.line, tok.col)
            return node
        finally:
            self.depth -= 1

    def parse_term(self) -> Expr:
        node = self.parse_unary()
        while self.peek().kind in ("STAR", "SLASH"):
            tok = self.advance()
            node = BinOp("*" if tok.kind == "STAR" else "/", node, self.parse_unary(), tok.line, tok.col)
        return node

    def parse_unary(self) -> Expr:
        tok = self.peek()
        if tok.kind in ("MINUS", "PLUS"):
            self.depth += 1
            if self.depth > MAX_NESTING:
                raise DSLSyntaxError("expression nested too deeply", tok.line, tok.col)
            try:
                self.advance()
                operand = self.parse_unary()
            finally:
                self.depth -= 1
            return Neg(operand) if tok.kind == "MINUS" else operand
        return self.parse_primary()

    def parse_primary(self) -> Expr:
        tok = self.peek()
        if tok.kind not in ("INT", "FLOAT", "IDENT", "LPAREN"):
            raise DSLSyntaxError(f"unexpected {_describe(tok)}", tok.line, tok.col,
                                 ("INT", "FLOAT", "IDENT", "LPAREN", "MINUS", "PLUS"))
        self.advance()
        if tok.kind in ("INT", "FLOAT"):
            return Num(Fraction(tok.value), tok.kind == "FLOAT")
        if tok.kind == "LPAREN":
            node = self.parse_expr()
            self.expect("RPAREN")
            return node
        offsets = self.parse_offsets()
        return Tap(tok.value, offsets, tok.line, tok.col)


def _describe(tok: Token) -> str:
    if tok.kind == "EOF":
        return "end of input"
    if tok.kind == "NEWLINE":
        return "end of line"
    return repr(tok)


def _check(name, unroll, iterate, inputs, stages, eof_tok) -> StencilProgram:
    if not inputs:
        raise SemanticError("no-input", "program declares no input", eof_tok.line, eof_tok.col)
    outputs = [s for s in stages if s[0] == "output"]
    if len(outputs) != 1:
        raise SemanticError("output-count", f"program must declare exactly one output, found {len(outputs)}", eof_tok.line, eof_tok.col)
    if stages[-1][0] != "output":
        tok = stages[-1][4]
        raise SemanticError("output-order", "the output must be the last declaration", tok.line, tok.col)

    shape = inputs[0][0].tile_shape
    rank = len(shape)
    ranks: dict[str, int] = {}
    types: dict[str, str] = {}
    for decl, tok in inputs:
        if decl.name in ranks:
            raise SemanticError("duplicate", f"array {decl.name!r} declared twice", tok.line, tok.col)
        if decl.tile_shape != shape:
            raise SemanticError("shape-mismatch", f"input {decl.name!r} has tile shape {decl.tile_shape}, expected {shape}", tok.line, tok.col)
        ranks[decl.name] = decl.rank
        types[decl.name] = decl.elem_type

    later = {s[2][0] for s in stages}
    locals_, outs = [], []
    for kind, elem_type, (stage_name, stage_rank), expr, tok in stages:
        if stage_name in ranks:
            raise SemanticError("duplicate", f"array {stage_name!r} declared twice", tok.line, tok.col)
        if stage_rank != rank:
            raise SemanticError("rank-mismatch", f"stage {stage_name!r} has rank {stage_rank}, expected {rank}", tok.line, tok.col)
        integer = not is_float_type(elem_type)
        for tap in taps(expr):
            if tap.array == stage_name:
                raise SemanticError("cycle", f"stage {stage_name!r} references itself", tap.line, tap.col)
            if tap.array not in ranks:
                if tap.array in later:
                    raise SemanticError("use-before-declaration", f"{tap.array!r} is used before it is declared", tap.line, tap.col)
                raise SemanticError("undeclared", f"undeclared array {tap.array!r}", tap.line, tap.col)
            if len(tap.offsets) != ranks[tap.array]:
                raise SemanticError("rank-mismatch", f"{tap.array!r} has rank {ranks[tap.array]} but is indexed with {len(tap.offsets)} offsets", tap.line, tap.col)
        if integer:
            _reject_float_literals(expr, tok)
        folded = fold(expr, integer)
        stage = StageDecl(stage_name, elem_type, folded, stage_rank, tok.line)
        (locals_ if kind == "local" else outs).append(stage)
        ranks[stage_name] = stage_rank
        types[stage_name] = elem_type
    return StencilProgram(name, unroll, iterate, tuple(d for d, _ in inputs), tuple(locals_), tuple(outs))


def _reject_float_literals(expr: Expr, tok: Token):
    stack = [expr]
    while stack:
        node = stack.pop()
        if isinstance(node, Num) and (node.float_literal or node.value.denominator != 1):
            raise SemanticError("literal-type", "floating-point literal in an integer stage", tok.line, tok.col)
        if isinstance(node, Neg):
            stack.append(node.operand)
        elif isinstance(node, BinOp):
            stack.extend((node.left, node.right))


def parse(tokens: list[Token]) -> StencilProgram:
    return _Parser(tokens).parse_program()


def parse_source(source: str) -> StencilProgram:
    return parse(tokenize(source))


def load(path) -> StencilProgram:
    with open(path, encoding="utf-8") as f:
        return parse_source(f.read())


# --------------------------------------------------------------------------
# pretty-printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}
_TYPE_NAMES = {"int32": "int32", "int64": "int64", "float32": "float", "float64": "double"}


def format_number(value: Fraction) -> str:
    if value.denominator == 1:
        text = str(value.numerator)
    else:
        den = value.denominator
        for p in (2, 5):
            while den % p == 0:
                den //= p
        if den == 1:
            text = _exact_decimal(value)
        else:
            return f"({value.numerator} / {value.denominator})"
    return f"({text})" if value < 0 else text


def _exact_decimal(value: Fraction) -> str:
    sign = "-" if value < 0 else ""
    value = abs(value)
    digits = 0
    while (value * 10**digits).denominator != 1:
        digits += 1
    scaled = int(value * 10**digits)
    whole, frac = divmod(scaled, 10**digits)
    return f"{sign}{whole}.{frac:0{digits}d}"


def format_expr(expr: Expr, parent_prec: int = 0, right: bool = False) -> str:
    if isinstance(expr, Num):
        return format_number(expr.value)
    if isinstance(expr, Tap):
        return f"{expr.array}({', '.join(str(o) for o in expr.offsets)})"
    if isinstance(expr, Neg):
        return f"-{format_expr(expr.operand, 3)}"
    prec = _PREC[expr.op]
    text = f"{format_expr(expr.left, prec)} {expr.op} {format_expr(expr.right, prec, right=True)}"
    if prec < parent_prec or (right and prec == parent_prec) or parent_prec == 3:
        return f"({text})"
    return text


def format_program(program: StencilProgram) -> str:
    lines = [
        f"kernel: {program.kernel_name}",
        f"unroll factor: {program.unroll_factor}",
        f"iterate factor: {program.iterate_factor}",
    ]
    for decl in program.inputs:
        extents = ", ".join("*" if e is None else str(e) for e in decl.tile_shape)
        lines.append(f"input {_TYPE_NAMES[decl.elem_type]}: {decl.name}({extents})")
    for kind, group in (("local", program.locals), ("output", program.outputs)):
        for stage in group:
            origin = ", ".join("0" for _ in range(stage.rank))
            lines.append(f"{kind} {_TYPE_NAMES[stage.elem_type]}: {stage.name}({origin}) = {format_expr(stage.expr)}")
    return "\n".join(lines) + "\n"
