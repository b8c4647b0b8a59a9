"""Abstract syntax, concrete-syntax parser, pretty-printer and desugaring.

Programs are immutable trees of frozen dataclasses.  Program variables are
referred to by index; the names live on :class:`Program`.

Concrete syntax (see ``docs/grammar.md`` for the EBNF)::

    gender ~ bern(0.51);
    if (gender = 1) {
      height ~ norm(175, 72)
    } else {
      height ~ norm(161, 50)
    }
    observe (height >= 200)
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence, Union

__all__ = [
    "Const", "Var", "Op", "Expr", "ARITY",
    "BTrue", "BFalse", "Cmp", "And", "Or", "Not", "BoolExpr", "RELATIONS",
    "Skip", "Assign", "SampleUniform", "SampleStdNormal", "SampleBern",
    "SampleNorm", "Observe", "Seq", "If", "While", "Stmt", "Program",
    "ParseError", "UnknownDistribution",
    "parse", "parse_bool", "desugar", "is_core", "has_loops", "seq",
    "format_expr", "format_bool", "format_stmt", "format_program",
    "format_rational", "walk_stmts",
]


# --- expressions -----------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: Fraction

    def __post_init__(self):
        if not isinstance(self.value, Fraction):
            object.__setattr__(self, "value", Fraction(self.value))


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Op:
    op: str
    args: tuple

    def __post_init__(self):
        if self.op not in ARITY:
            raise ValueError(f"unknown operator {self.op!r}")
        if not isinstance(self.args, tuple):
            object.__setattr__(self, "args", tuple(self.args))
        if len(self.args) != ARITY[self.op]:
            raise ValueError(f"operator {self.op!r} takes {ARITY[self.op]} arguments, got {len(self.args)}")


# neg is unary minus; no division so every operator stays total except sqrt
ARITY = {"+": 2, "-": 2, "*": 2, "neg": 1, "sqrt": 1}

Expr = Union[Const, Var, Op]


# --- Boolean expressions ---------------------------------------------------

@dataclass(frozen=True)
class BTrue:
    pass


@dataclass(frozen=True)
class BFalse:
    pass


@dataclass(frozen=True)
class Cmp:
    rel: str
    lhs: Expr
    rhs: Expr

    def __post_init__(self):
        if self.rel not in RELATIONS:
            raise ValueError(f"unknown relation {self.rel!r}")


@dataclass(frozen=True)
class And:
    left: "BoolExpr"
    right: "BoolExpr"


@dataclass(frozen=True)
class Or:
    left: "BoolExpr"
    right: "BoolExpr"


@dataclass(frozen=True)
class Not:
    arg: "BoolExpr"


RELATIONS = ("<", "<=", "=", "!=", ">=", ">")

BoolExpr = Union[BTrue, BFalse, Cmp, And, Or, Not]


# --- statements ------------------------------------------------------------

@dataclass(frozen=True)
class Skip:
    pass


@dataclass(frozen=True)
class Assign:
    var: int
    expr: Expr


@dataclass(frozen=True)
class SampleUniform:
    var: int


@dataclass(frozen=True)
class SampleStdNormal:
    var: int


@dataclass(frozen=True)
class SampleBern:
    var: int
    prob: Expr


@dataclass(frozen=True)
class SampleNorm:
    var: int
    mean: Expr
    variance: Expr


@dataclass(frozen=True)
class Observe:
    cond: BoolExpr


@dataclass(frozen=True)
class Seq:
    first: "Stmt"
    second: "Stmt"


@dataclass(frozen=True)
class If:
    cond: BoolExpr
    then: "Stmt"
    orelse: "Stmt"


@dataclass(frozen=True)
class While:
    cond: BoolExpr
    body: "Stmt"


Stmt = Union[Skip, Assign, SampleUniform, SampleStdNormal, SampleBern,
             SampleNorm, Observe, Seq, If, While]

SUGAR = (SampleBern, SampleNorm)


@dataclass(frozen=True)
class Program:
    vars: tuple
    body: Stmt

    def __post_init__(self):
        if not isinstance(self.vars, tuple):
            object.__setattr__(self, "vars", tuple(self.vars))

    @property
    def n(self) -> int:
        return len(self.vars)

    def index(self, name: str) -> int:
        return self.vars.index(name)

    def __str__(self):
        return format_program(self)


def seq(*stmts: Stmt) -> Stmt:
    """Right-nested sequence of ``stmts`` (``Skip`` when empty)."""
    if not stmts:
        return Skip()
    out = stmts[-1]
    for s in reversed(stmts[:-1]):
        out = Seq(s, out)
    return out


def walk_stmts(s: Stmt) -> Iterator[Stmt]:
    yield s
    if isinstance(s, Seq):
        yield from walk_stmts(s.first)
        yield from walk_stmts(s.second)
    elif isinstance(s, If):
        yield from walk_stmts(s.then)
        yield from walk_stmts(s.orelse)
    elif isinstance(s, While):
        yield from walk_stmts(s.body)


def is_core(s: Stmt) -> bool:
    return not any(isinstance(t, SUGAR) for t in walk_stmts(s))


def has_loops(s: Stmt) -> bool:
    return any(isinstance(t, While) for t in walk_stmts(s))


# --- desugaring ------------------------------------------------------------

def desugar(p: Program | Stmt) -> Program | Stmt:
    """Rewrite ``bern`` and ``norm`` sampling into the two primitive samplers.

    ``x ~ bern(t)`` becomes ``x ~ rnd; if (x < t) {x := 1} else {x := 0}`` and
    ``x ~ norm(m, v)`` becomes ``x ~ stdnorm; x := x * sqrt(v) + m``.  The
    parameters are evaluated after ``x`` has been overwritten, so they should
    not mention ``x`` itself.
    """
    if isinstance(p, Program):
        return Program(p.vars, desugar(p.body))
    return _desugar(p)


def _desugar(s: Stmt) -> Stmt:
    if isinstance(s, SampleBern):
        x = Var(s.var)
        return Seq(SampleUniform(s.var),
                   If(Cmp("<", x, s.prob), Assign(s.var, Const(1)), Assign(s.var, Const(0))))
    if isinstance(s, SampleNorm):
        x = Var(s.var)
        scaled = Op("+", (Op("*", (x, Op("sqrt", (s.variance,)))), s.mean))
        return Seq(SampleStdNormal(s.var), Assign(s.var, scaled))
    if isinstance(s, Seq):
        return Seq(_desugar(s.first), _desugar(s.second))
    if isinstance(s, If):
        return If(s.cond, _desugar(s.then), _desugar(s.orelse))
    if isinstance(s, While):
        return While(s.cond, _desugar(s.body))
    return s


# --- printing --------------------------------------------------------------

def format_rational(q: Fraction) -> str:
    """Exact decimal text for ``q`` when it terminates, ``p/q`` otherwise."""
    q = Fraction(q)
    sign = "-" if q < 0 else ""
    q = abs(q)
    den = q.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"{sign}{q.numerator}/{q.denominator}"
    digits = max(twos, fives)
    if digits == 0:
        return f"{sign}{q.numerator}"
    scaled = q.numerator * 10 ** digits // q.denominator
    whole, frac = divmod(scaled, 10 ** digits)
    return f"{sign}{whole}.{frac:0{digits}d}"


_PREC = {"+": 1, "-": 1, "*": 2, "neg": 3}


def _expr_prec(e) -> int:
    if isinstance(e, Op) and e.op in _PREC:
        return _PREC[e.op]
    if isinstance(e, Const) and e.value < 0:
        return 3
    return 4


def format_expr(e, names: Sequence[str] | None = None) -> str:
    """Canonical text of an expression; ``names`` maps variable indices.

    Also prints symbolic expressions: any leaf with a ``label`` attribute is
    printed as that label.
    """
    if isinstance(e, Const):
        return format_rational(e.value)
    if isinstance(e, Var):
        return names[e.index] if names is not None else f"x{e.index}"
    if isinstance(e, Op):
        if e.op == "sqrt":
            return f"sqrt({format_expr(e.args[0], names)})"
        if e.op == "neg":
            inner = format_expr(e.args[0], names)
            return f"-{inner}" if _expr_prec(e.args[0]) >= 3 else f"-({inner})"
        p = _PREC[e.op]
        left = format_expr(e.args[0], names)
        right = format_expr(e.args[1], names)
        if _expr_prec(e.args[0]) < p:
            left = f"({left})"
        if _expr_prec(e.args[1]) <= p:
            right = f"({right})"
        return f"{left} {e.op} {right}"
    label = getattr(e, "label", None)
    if label is not None:
        return label
    raise TypeError(f"not an expression: {e!r}")


_BPREC = {Or: 1, And: 2, Not: 3}


def _bool_prec(b) -> int:
    return _BPREC.get(type(b), 4)


def format_bool(b, names: Sequence[str] | None = None) -> str:
    if isinstance(b, BTrue):
        return "true"
    if isinstance(b, BFalse):
        return "false"
    if isinstance(b, Cmp):
        return f"{format_expr(b.lhs, names)} {b.rel} {format_expr(b.rhs, names)}"
    if isinstance(b, Not):
        inner = format_bool(b.arg, names)
        return f"!{inner}" if _bool_prec(b.arg) >= 3 and not isinstance(b.arg, Cmp) else f"!({inner})"
    if isinstance(b, (And, Or)):
        p = _bool_prec(b)
        sym = "&&" if isinstance(b, And) else "||"
        left = format_bool(b.left, names)
        right = format_bool(b.right, names)
        if _bool_prec(b.left) < p:
            left = f"({left})"
        if _bool_prec(b.right) <= p:
            right = f"({right})"
        return f"{left} {sym} {right}"
    raise TypeError(f"not a Boolean expression: {b!r}")


def _is_compound(s: Stmt) -> bool:
    return isinstance(s, (If, While))


def _format_lines(s: Stmt, names, indent: str) -> list[str]:
    # a Seq in first position needs its own block to keep the tree shape
    if isinstance(s, Seq):
        if isinstance(s.first, Seq):
            head = [indent + "{"] + _format_lines(s.first, names, indent + "  ") + [indent + "}"]
        else:
            head = _format_lines(s.first, names, indent)
        if not _is_compound(s.first) and not isinstance(s.first, Seq):
            head[-1] += ";"
        return head + _format_lines(s.second, names, indent)
    nm = (lambda i: names[i]) if names is not None else (lambda i: f"x{i}")
    if isinstance(s, Skip):
        return [indent + "skip"]
    if isinstance(s, Assign):
        return [f"{indent}{nm(s.var)} := {format_expr(s.expr, names)}"]
    if isinstance(s, SampleUniform):
        return [f"{indent}{nm(s.var)} ~ rnd"]
    if isinstance(s, SampleStdNormal):
        return [f"{indent}{nm(s.var)} ~ stdnorm"]
    if isinstance(s, SampleBern):
        return [f"{indent}{nm(s.var)} ~ bern({format_expr(s.prob, names)})"]
    if isinstance(s, SampleNorm):
        return [f"{indent}{nm(s.var)} ~ norm({format_expr(s.mean, names)}, {format_expr(s.variance, names)})"]
    if isinstance(s, Observe):
        return [f"{indent}observe ({format_bool(s.cond, names)})"]
    if isinstance(s, If):
        return ([f"{indent}if ({format_bool(s.cond, names)}) {{"]
                + _format_lines(s.then, names, indent + "  ")
                + [f"{indent}}} else {{"]
                + _format_lines(s.orelse, names, indent + "  ")
                + [f"{indent}}}"])
    if isinstance(s, While):
        return ([f"{indent}while ({format_bool(s.cond, names)}) {{"]
                + _format_lines(s.body, names, indent + "  ")
                + [f"{indent}}}"])
    raise TypeError(f"not a statement: {s!r}")


def format_stmt(s: Stmt, names: Sequence[str] | None = None) -> str:
    return "\n".join(_format_lines(s, names, ""))


def format_program(p: Program) -> str:
    return format_stmt(p.body, p.vars) + "\n"


# --- lexing ----------------------------------------------------------------

class ParseError(Exception):
    """Syntax error at ``line``:``col`` (1-based) with the expected tokens."""

    def __init__(self, message: str, line: int, col: int, expected=()):
        self.message = message
        self.line = line
        self.col = col
        self.expected = frozenset(expected)
        detail = f" (expected {', '.join(sorted(self.expected))})" if self.expected else ""
        super().__init__(f"{line}:{col}: {message}{detail}")


class UnknownDistribution(ParseError):
    pass


KEYWORDS = {"skip", "observe", "if", "else", "while", "true", "false", "sqrt"}
DISTRIBUTIONS = ("rnd", "stdnorm", "bern", "norm")

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+|//[^\n]*|\#[^\n]*)
  | (?P<num>\d+/\d+|\d+(?:\.\d*)?|\.\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|<=|>=|!=|==|&&|\|\||[-+*~;(){},<>=!≤≥≠∧∨¬])
""", re.VERBOSE)

_ALIASES = {"≤": "<=", "≥": ">=", "≠": "!=", "==": "=", "∧": "&&", "∨": "||", "¬": "!"}


@dataclass(frozen=True)
class Token:
    kind: str   # num | ident | kw | op | eof
    text: str
    line: int
    col: int


def tokenize(source: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        col = pos - line_start + 1
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, col)
        kind = m.lastgroup
        text = m.group()
        if kind == "ident" and text in KEYWORDS:
            kind = "kw"
        if kind == "op":
            text = _ALIASES.get(text, text)
        if kind != "ws":
            tokens.append(Token(kind, text, line, col))
        newlines = m.group().count("\n")
        if newlines:
            line += newlines
            line_start = pos + m.group().rindex("\n") + 1
        pos = m.end()
    col = pos - line_start + 1
    tokens.append(Token("eof", "end of input", line, col))
    return tokens


# --- parsing ---------------------------------------------------------------

_ARITH_FOLLOW = {"+", "-", "*", "<", "<=", "=", "!=", ">=", ">"}


class _Parser:
    def __init__(self, source: str, names: Sequence[str] = ()):
        self.tokens = tokenize(source)
        self.pos = 0
        self.names: list[str] = list(names)

    # token helpers
    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def at(self, *texts: str) -> bool:
        t = self.tok
        return t.kind in ("op", "kw") and t.text in texts

    def error(self, message: str, *expected: str):
        t = self.tok
        raise ParseError(message, t.line, t.col, expected)

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.error(f"unexpected {self.tok.text!r}", repr(text))
        t = self.tok
        self.pos += 1
        return t

    def var(self, name: str) -> int:
        if name not in self.names:
            self.names.append(name)
        return self.names.index(name)

    # statements
    def program(self) -> Stmt:
        body = self.stmts(end="eof")
        if self.tok.kind != "eof":
            self.error(f"unexpected {self.tok.text!r}", "';'", "end of input")
        return body

    def stmts(self, end: str) -> Stmt:
        items = []
        while True:
            if end == "eof" and self.tok.kind == "eof" or end == "}" and self.at("}"):
                if not items:
                    self.error("empty statement list", "statement")
                break
            braced = self.at("{")
            s = self.stmt()
            items.append(s)
            if self.at(";"):
                self.pos += 1
                continue
            if self.tok.kind == "eof" or self.at("}"):
                break
            if braced or isinstance(s, (If, While)):
                continue
            self.error(f"unexpected {self.tok.text!r}", "';'", "'}'", "end of input")
        return seq(*items)

    def block(self) -> Stmt:
        self.expect("{")
        body = self.stmts(end="}")
        self.expect("}")
        return body

    def stmt(self) -> Stmt:
        t = self.tok
        if t.kind == "kw":
            if t.text == "skip":
                self.pos += 1
                return Skip()
            if t.text == "observe":
                self.pos += 1
                return Observe(self.bexpr())
            if t.text == "if":
                self.pos += 1
                cond = self.paren_cond()
                then = self.block()
                orelse = Skip()
                if self.at("else"):
                    self.pos += 1
                    orelse = self.stmt_if_or_block()
                return If(cond, then, orelse)
            if t.text == "while":
                self.pos += 1
                cond = self.paren_cond()
                return While(cond, self.block())
            self.error(f"unexpected keyword {t.text!r}", "statement")
        if self.at("{"):
            return self.block()
        if t.kind == "ident":
            self.pos += 1
            if self.at(":="):
                self.pos += 1
                target = self.var(t.text)
                return Assign(target, self.expr())
            if self.at("~"):
                self.pos += 1
                target = self.var(t.text)
                return self.distribution(target)
            self.error(f"unexpected {self.tok.text!r}", "':='", "'~'")
        self.error(f"unexpected {t.text!r}", "statement")

    def stmt_if_or_block(self) -> Stmt:
        if self.at("if"):
            return self.stmt()
        return self.block()

    def paren_cond(self) -> BoolExpr:
        # the condition of if/while is a Boolean expression; parentheses are
        # part of it rather than mandatory syntax
        return self.bexpr()

    def distribution(self, target: int) -> Stmt:
        t = self.tok
        if t.kind != "ident":
            self.error(f"unexpected {t.text!r}", *DISTRIBUTIONS)
        name = t.text
        if name not in DISTRIBUTIONS:
            raise UnknownDistribution(f"unknown distribution {name!r}", t.line, t.col, DISTRIBUTIONS)
        self.pos += 1
        if name == "rnd":
            return SampleUniform(target)
        if name == "stdnorm":
            return SampleStdNormal(target)
        self.expect("(")
        first = self.expr()
        if name == "bern":
            self.expect(")")
            return SampleBern(target, first)
        self.expect(",")
        second = self.expr()
        self.expect(")")
        return SampleNorm(target, first, second)

    # Boolean expressions
    def bexpr(self) -> BoolExpr:
        left = self.bconj()
        while self.at("||"):
            self.pos += 1
            left = Or(left, self.bconj())
        return left

    def bconj(self) -> BoolExpr:
        left = self.bunary()
        while self.at("&&"):
            self.pos += 1
            left = And(left, self.bunary())
        return left

    def bunary(self) -> BoolExpr:
        if self.at("!"):
            self.pos += 1
            return Not(self.bunary())
        return self.batom()

    def batom(self) -> BoolExpr:
        if self.at("true"):
            self.pos += 1
            return BTrue()
        if self.at("false"):
            self.pos += 1
            return BFalse()
        if self.at("("):
            # either a parenthesised Boolean or an arithmetic operand
            saved = self.pos
            try:
                self.pos += 1
                inner = self.bexpr()
                self.expect(")")
                if not self.at(*_ARITH_FOLLOW):
                    return inner
            except ParseError:
                pass
            self.pos = saved
        lhs = self.expr()
        if not self.at(*RELATIONS):
            self.error(f"unexpected {self.tok.text!r}", *(repr(r) for r in RELATIONS))
        rel = self.tok.text
        self.pos += 1
        return Cmp(rel, lhs, self.expr())

    # arithmetic
    def expr(self) -> Expr:
        left = self.term()
        while self.at("+", "-"):
            op = self.tok.text
            self.pos += 1
            left = Op(op, (left, self.term()))
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.at("*"):
            self.pos += 1
            left = Op("*", (left, self.unary()))
        return left

    def unary(self) -> Expr:
        if self.at("-"):
            self.pos += 1
            return Op("neg", (self.unary(),))
        return self.atom()

    def atom(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            if "/" in t.text and int(t.text.split("/")[1]) == 0:
                self.error("zero denominator in rational literal")
            self.pos += 1
            return Const(Fraction(t.text))
        if t.kind == "ident":
            self.pos += 1
            return Var(self.var(t.text))
        if self.at("sqrt"):
            self.pos += 1
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return Op("sqrt", (arg,))
        if self.at("("):
            self.pos += 1
            inner = self.expr()
            self.expect(")")
            return inner
        self.error(f"unexpected {t.text!r}", "number", "identifier", "'('", "'-'", "'sqrt'")


def parse(source: str) -> Program:
    """Parse program text; variables are numbered in order of first use."""
    p = _Parser(source)
    body = p.program()
    return Program(tuple(p.names), body)


def parse_bool(source: str, names: Sequence[str]) -> BoolExpr:
    """Parse a standalone Boolean expression over the given variable names."""
    p = _Parser(source, names)
    b = p.bexpr()
    if p.tok.kind != "eof":
        p.error(f"unexpected {p.tok.text!r}", "end of input")
    if len(p.names) != len(names):
        extra = p.names[len(names)]
        raise ParseError(f"unknown variable {extra!r}", 1, 1)
    return b
