"""Feasibility of path conditions and observations through an SMT solver.

Constraints are emitted as SMT-LIB2 in QF_NRA and piped to an external
solver process (``z3 -in`` unless configured otherwise).  ``sqrt(e)`` becomes
a fresh constant ``s`` with ``s * s = e`` and ``s >= 0`` so the query stays
polynomial.  Uniform samples are bounded to [0, 1]; normal samples are free.
"""
from __future__ import annotations

import os
import shlex
import shutil
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Sequence

from .concrete import MeasureSpec, Point, Uniform01
from .interp import UNIFORM, SampleVar, Valuation, iter_leaves
from .symexec import Feasibility, PathOutcome
from .syntax import And, BFalse, BTrue, Cmp, Const, Not, Op, Or, Var

SOLVER_ENV = "PROBSYM_SOLVER"
DEFAULT_SOLVER = "z3 -in"


class SolverUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class Sat:
    model: dict | None = None   # name -> Fraction, rational values only

    def valuation(self, n: int = 0, seed: int = 0) -> Valuation:
        """The model as a point of R^(n+omega); unmentioned values default."""
        model = self.model or {}
        k_y = 1 + max((int(k[1:]) for k in model if k.startswith("u")), default=-1)
        k_z = 1 + max((int(k[1:]) for k in model if k.startswith("g")), default=-1)
        uni = [float(model.get(f"u{k}", Fraction(1, 2))) for k in range(k_y)]
        nrm = [float(model.get(f"g{k}", 0)) for k in range(k_z)]
        vars = [float(model.get(f"x{i}", 0)) for i in range(n)]
        return Valuation.make(vars, uni, nrm, seed=seed)


@dataclass(frozen=True)
class Unsat:
    pass


@dataclass(frozen=True)
class Unknown:
    reason: str


SatVerdict = Sat | Unsat | Unknown


# --- emission ----------------------------------------------------------------

def _rational(q: Fraction) -> str:
    q = Fraction(q)
    body = str(abs(q.numerator)) if q.denominator == 1 else f"(/ {abs(q.numerator)} {q.denominator})"
    return f"(- {body})" if q < 0 else body


_RELS = {"<": "<", "<=": "<=", "=": "=", ">=": ">=", ">": ">"}
_OPS = {"+": "+", "-": "-", "*": "*"}


class _Emitter:
    def __init__(self):
        self.samples: set = set()
        self.vars: set = set()
        self.sqrt_names: dict = {}     # argument text -> aux name
        self.sqrt_defs: list = []

    def term(self, e) -> str:
        if isinstance(e, Const):
            return _rational(e.value)
        if isinstance(e, Var):
            self.vars.add(e.index)
            return f"x{e.index}"
        if isinstance(e, SampleVar):
            self.samples.add((e.dist, e.index))
            return f"{'u' if e.dist == UNIFORM else 'g'}{e.index}"
        if isinstance(e, Op):
            args = [self.term(a) for a in e.args]
            if e.op in _OPS:
                return f"({_OPS[e.op]} {args[0]} {args[1]})"
            if e.op == "neg":
                return f"(- {args[0]})"
            if e.op == "sqrt":
                name = self.sqrt_names.get(args[0])
                if name is None:
                    name = f"s{len(self.sqrt_names)}"
                    self.sqrt_names[args[0]] = name
                    self.sqrt_defs.append((name, args[0]))
                return name
        raise TypeError(f"cannot translate {e!r}")

    def formula(self, b) -> str:
        if isinstance(b, BTrue):
            return "true"
        if isinstance(b, BFalse):
            return "false"
        if isinstance(b, Cmp):
            lhs, rhs = self.term(b.lhs), self.term(b.rhs)
            if b.rel == "!=":
                return f"(not (= {lhs} {rhs}))"
            return f"({_RELS[b.rel]} {lhs} {rhs})"
        if isinstance(b, And):
            return f"(and {self.formula(b.left)} {self.formula(b.right)})"
        if isinstance(b, Or):
            return f"(or {self.formula(b.left)} {self.formula(b.right)})"
        if isinstance(b, Not):
            return f"(not {self.formula(b.arg)})"
        raise TypeError(f"cannot translate {b!r}")


def emit_smt(constraints: Iterable, measure: MeasureSpec | None = None,
             get_model: bool = True) -> str:
    """SMT-LIB2 script asserting every constraint (a literal ``true`` adds nothing).

    With a ``measure``, point-valued program variables are pinned and
    uniform ones bounded; otherwise program variables are free reals.
    """
    em = _Emitter()
    asserts = [em.formula(c) for c in constraints if not isinstance(c, BTrue)]
    lines = ["(set-option :produce-models true)", "(set-logic QF_NRA)"]
    uniforms = sorted(k for d, k in em.samples if d == UNIFORM)
    normals = sorted(k for d, k in em.samples if d != UNIFORM)
    names = ([f"u{k}" for k in uniforms] + [f"g{k}" for k in normals]
             + [f"x{i}" for i in sorted(em.vars)] + [name for name, _ in em.sqrt_defs])
    lines += [f"(declare-const {name} Real)" for name in names]
    lines += [f"(assert (and (<= 0 u{k}) (<= u{k} 1)))" for k in uniforms]
    if measure is not None:
        for i in sorted(em.vars):
            m = measure[i]
            if isinstance(m, Point):
                lines.append(f"(assert (= x{i} {_rational(Fraction(m.value))}))")
            elif isinstance(m, Uniform01):
                lines.append(f"(assert (and (<= 0 x{i}) (<= x{i} 1)))")
    for name, arg in em.sqrt_defs:
        lines.append(f"(assert (= (* {name} {name}) {arg}))")
        lines.append(f"(assert (>= {name} 0))")
    lines += [f"(assert {a})" for a in asserts]
    lines.append("(check-sat)")
    if get_model:
        lines.append("(get-model)")
    return "\n".join(lines) + "\n"


# --- model parsing -------------------------------------------------------------

def _sexprs(text: str):
    tokens = text.replace("(", " ( ").replace(")", " ) ").split()
    stack: list = [[]]
    for tok in tokens:
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if len(stack) == 1:
                break
            done = stack.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    return stack[0]


def _value(v) -> Fraction | None:
    if isinstance(v, str):
        try:
            return Fraction(v)
        except ValueError:
            return None
    if not v:
        return None
    head, args = v[0], [_value(a) for a in v[1:]]
    if any(a is None for a in args):
        return None
    if head == "-" and len(args) == 1:
        return -args[0]
    if head == "-":
        return args[0] - sum(args[1:])
    if head == "+":
        return sum(args, Fraction(0))
    if head == "/" and len(args) == 2 and args[1] != 0:
        return args[0] / args[1]
    if head == "*":
        out = Fraction(1)
        for a in args:
            out *= a
        return out
    return None   # algebraic numbers and anything else


def parse_model(text: str) -> dict:
    model = {}
    for item in _sexprs(text):
        if not isinstance(item, list):
            continue
        defs = item if item and isinstance(item[0], list) else [item]
        for d in defs:
            if isinstance(d, list) and len(d) == 5 and d[0] == "define-fun" and d[2] == []:
                value = _value(d[4])
                if value is not None and d[1][0] in "ugx":
                    model[d[1]] = value
    return model


# --- ground folding ------------------------------------------------------------

_CMP = {"<": lambda a, b: a < b, "<=": lambda a, b: a <= b, "=": lambda a, b: a == b,
        "!=": lambda a, b: a != b, ">=": lambda a, b: a >= b, ">": lambda a, b: a > b}


def _exact(e) -> Fraction:
    if isinstance(e, Const):
        return e.value
    a = [_exact(x) for x in e.args]
    if e.op == "+":
        return a[0] + a[1]
    if e.op == "-":
        return a[0] - a[1]
    if e.op == "*":
        return a[0] * a[1]
    return -a[0]


def _ground_truth(b) -> bool:
    """Exact truth value of a sqrt-free Boolean over constants only."""
    if isinstance(b, BTrue):
        return True
    if isinstance(b, BFalse):
        return False
    if isinstance(b, Cmp):
        return _CMP[b.rel](_exact(b.lhs), _exact(b.rhs))
    if isinstance(b, And):
        return _ground_truth(b.left) and _ground_truth(b.right)
    if isinstance(b, Or):
        return _ground_truth(b.left) or _ground_truth(b.right)
    return not _ground_truth(b.arg)


def _sqrt_free(t) -> bool:
    if isinstance(t, Op):
        return t.op != "sqrt" and all(_sqrt_free(a) for a in t.args)
    if isinstance(t, Cmp):
        return _sqrt_free(t.lhs) and _sqrt_free(t.rhs)
    if isinstance(t, (And, Or)):
        return _sqrt_free(t.left) and _sqrt_free(t.right)
    if isinstance(t, Not):
        return _sqrt_free(t.arg)
    return True


def _is_ground(b) -> bool:
    return all(isinstance(leaf, Const) for leaf in iter_leaves(b)) and _sqrt_free(b)


def ground_false(constraints: Iterable) -> bool:
    """True if some variable-free conjunct is false over the reals.

    Desugared ``bern`` produces many such conjuncts (``1 = 0``), so this
    saves a solver call on most infeasible paths without changing verdicts.
    """
    return any(_is_ground(c) and not _ground_truth(c) for c in constraints)


# --- running the solver ------------------------------------------------------

class Solver:
    """An external SMT-LIB2 solver reached through a subprocess."""

    def __init__(self, cmd: str | None = None, timeout_ms: int = 10_000):
        self.cmd = cmd or os.environ.get(SOLVER_ENV) or DEFAULT_SOLVER
        self.argv = shlex.split(self.cmd)
        self.timeout_ms = timeout_ms

    @property
    def available(self) -> bool:
        return bool(self.argv) and shutil.which(self.argv[0]) is not None

    def check(self, constraints: Sequence, measure: MeasureSpec | None = None,
              timeout_ms: int | None = None) -> SatVerdict:
        if not self.available:
            raise SolverUnavailable(f"solver command not found: {self.cmd!r}")
        script = emit_smt(constraints, measure)
        timeout = (timeout_ms if timeout_ms is not None else self.timeout_ms) / 1000.0
        try:
            proc = subprocess.run(self.argv, input=script, capture_output=True,
                                  text=True, timeout=timeout)
        except subprocess.TimeoutExpired:
            return Unknown("timeout")
        except OSError as exc:
            raise SolverUnavailable(str(exc)) from exc
        out = proc.stdout.strip()
        first, _, rest = out.partition("\n")
        first = first.strip()
        if first == "sat":
            return Sat(parse_model(rest) or None)
        if first == "unsat":
            return Unsat()
        if first == "unknown":
            return Unknown("solver returned unknown")
        return Unknown(f"unexpected solver output: {out[:200]!r} {proc.stderr[:200]!r}")

    def classify(self, outcome: PathOutcome, measure: MeasureSpec | None = None) -> PathOutcome:
        """Mark an outcome InfeasiblePC, Discarded or Feasible.

        An unknown verdict counts as feasible (nothing is pruned) and sets
        ``solver_unknown``.
        """
        if ground_false(outcome.cfg.pc):
            return replace(outcome, feasibility=Feasibility.INFEASIBLE_PC, solver_unknown=False)
        try:
            pc = self.check(outcome.cfg.pc, measure)
            if isinstance(pc, Unsat):
                return replace(outcome, feasibility=Feasibility.INFEASIBLE_PC, solver_unknown=False)
            if ground_false(outcome.cfg.po):
                joint = Unsat()
            else:
                joint = self.check(outcome.cfg.pc + outcome.cfg.po, measure)
        except SolverUnavailable:
            return replace(outcome, feasibility=Feasibility.FEASIBLE, solver_unknown=True)
        if isinstance(joint, Unsat):
            return replace(outcome, feasibility=Feasibility.DISCARDED,
                           solver_unknown=isinstance(pc, Unknown))
        unknown = isinstance(pc, Unknown) or isinstance(joint, Unknown)
        return replace(outcome, feasibility=Feasibility.FEASIBLE, solver_unknown=unknown)

    def classify_all(self, outcomes: Sequence[PathOutcome], measure: MeasureSpec | None = None,
                     threads: int = 1) -> list[PathOutcome]:
        if threads > 1 and len(outcomes) > 1:
            with ThreadPoolExecutor(threads) as pool:
                return list(pool.map(lambda o: self.classify(o, measure), outcomes))
        return [self.classify(o, measure) for o in outcomes]


def check(constraints: Sequence, timeout_ms: int = 10_000, solver_cmd: str | None = None,
          measure: MeasureSpec | None = None) -> SatVerdict:
    return Solver(solver_cmd, timeout_ms).check(constraints, measure)


def classify(outcome: PathOutcome, timeout_ms: int = 10_000, solver_cmd: str | None = None,
             measure: MeasureSpec | None = None) -> PathOutcome:
    return Solver(solver_cmd, timeout_ms).classify(outcome, measure)
