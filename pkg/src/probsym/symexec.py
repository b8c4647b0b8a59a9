"""Symbolic execution: transition rules, bounded path exploration, and the
compositional big-step enumerator used to cross-check exploration.

A configuration is ``(subst, k_y, k_z, pc, po)``.  Path conditions and path
observations are kept as tuples of conjuncts; the empty tuple is ``true``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

from .interp import (NORMAL, UNIFORM, SampleVar, Substitution, apply_subst,
                     apply_subst_bool, identity_subst, rebase, rebase_bool,
                     update_subst)
from .syntax import (Assign, BoolExpr, Cmp, If, Not, Observe, Program,
                     SampleStdNormal, SampleUniform, Seq, Skip, Stmt, While,
                     desugar, format_bool, format_expr, has_loops, is_core)


class BudgetError(RuntimeError):
    """Exploration produced more paths than the configured cap."""


class UnsupportedLoop(ValueError):
    """The big-step enumerator only handles loop-free programs."""


class Status(str, enum.Enum):
    FINAL = "final"
    UNROLL_EXHAUSTED = "unroll-exhausted"


class Feasibility(str, enum.Enum):
    UNCHECKED = "unchecked"
    FEASIBLE = "feasible"
    INFEASIBLE_PC = "infeasible-pc"
    DISCARDED = "discarded"


@dataclass(frozen=True)
class Configuration:
    subst: Substitution
    k_y: int = 0
    k_z: int = 0
    pc: tuple = ()
    po: tuple = ()

    @classmethod
    def initial(cls, n: int) -> "Configuration":
        return cls(identity_subst(n))

    @property
    def samples(self) -> int:
        return self.k_y + self.k_z

    def describe(self, names: Sequence[str]) -> dict:
        return {
            "subst": format_subst(self.subst, names),
            "k_y": self.k_y,
            "k_z": self.k_z,
            "pc": format_conj(self.pc, names),
            "po": format_conj(self.po, names),
        }


@dataclass(frozen=True)
class SymState:
    prog: Stmt
    cfg: Configuration
    choices: str = ""
    exhausted: bool = False
    loops: tuple = ()    # (id of While node, iter-T count on this path)

    def fired(self, loop: While) -> int:
        return dict(self.loops).get(id(loop), 0)

    @property
    def final(self) -> bool:
        return isinstance(self.prog, Skip)


@dataclass(frozen=True)
class PathOutcome:
    cfg: Configuration
    status: Status
    choices: str
    feasibility: Feasibility = Feasibility.UNCHECKED
    solver_unknown: bool = False

    @property
    def constraints(self) -> tuple:
        return self.cfg.pc + self.cfg.po


# --- transition rules ------------------------------------------------------

def _rules(prog, cfg: Configuration, unroll, fired):
    """Successors of ``prog`` as (program, configuration, choice bit, exhausted,
    loop fired or None)."""
    sigma = cfg.subst
    if isinstance(prog, Assign):
        new = update_subst(sigma, prog.var, apply_subst(sigma, prog.expr))
        return [(Skip(), replace(cfg, subst=new), "", False, None)]
    if isinstance(prog, SampleUniform):
        new = update_subst(sigma, prog.var, SampleVar(UNIFORM, cfg.k_y))
        return [(Skip(), replace(cfg, subst=new, k_y=cfg.k_y + 1), "", False, None)]
    if isinstance(prog, SampleStdNormal):
        new = update_subst(sigma, prog.var, SampleVar(NORMAL, cfg.k_z))
        return [(Skip(), replace(cfg, subst=new, k_z=cfg.k_z + 1), "", False, None)]
    if isinstance(prog, Observe):
        return [(Skip(), replace(cfg, po=cfg.po + (apply_subst_bool(sigma, prog.cond),)), "", False, None)]
    if isinstance(prog, Seq):
        if isinstance(prog.first, Skip):
            return [(prog.second, cfg, "", False, None)]
        return [(Seq(p, prog.second), c, bit, ex, lp)
                for p, c, bit, ex, lp in _rules(prog.first, cfg, unroll, fired)]
    if isinstance(prog, If):
        return [
            (prog.then, replace(cfg, pc=cfg.pc + (apply_subst_bool(sigma, prog.cond),)), "T", False, None),
            (prog.orelse, replace(cfg, pc=cfg.pc + (apply_subst_bool(sigma, Not(prog.cond)),)), "F", False, None),
        ]
    if isinstance(prog, While):
        exhausted = unroll is not None and fired(prog) >= unroll
        return [
            (Seq(prog.body, prog),
             replace(cfg, pc=cfg.pc + (apply_subst_bool(sigma, prog.cond),)), "T", exhausted, prog),
            (Skip(), replace(cfg, pc=cfg.pc + (apply_subst_bool(sigma, Not(prog.cond)),)), "F", False, None),
        ]
    if isinstance(prog, Skip):
        raise ValueError("a terminated state has no successors")
    raise TypeError(f"not a core statement: {prog!r}")


def _bump(loops: tuple, loop: While) -> tuple:
    counts = dict(loops)
    counts[id(loop)] = counts.get(id(loop), 0) + 1
    return tuple(counts.items())


def step(s: SymState, unroll: int | None = None) -> list[SymState]:
    """One symbolic transition.  ``If`` and loops give two successors
    (true branch first), every other statement one.

    Each ``While`` node may fire iter-T ``unroll`` times along a path (the
    count is per syntactic loop, not per activation); the iter-T successor
    past the budget is flagged ``exhausted``.
    """
    out = []
    for p, c, bit, ex, loop in _rules(s.prog, s.cfg, unroll, s.fired):
        loops = s.loops if loop is None else _bump(s.loops, loop)
        out.append(SymState(p, c, s.choices + bit, ex, loops))
    return out


def _core(p: Program | Stmt) -> Stmt:
    body = p.body if isinstance(p, Program) else p
    return body if is_core(body) else desugar(body)


def explore(p: Program, unroll: int = 4, max_paths: int = 100_000) -> list[PathOutcome]:
    """Depth-first enumeration of every symbolic path of ``p``.

    Paths are returned in canonical order (choice strings lexicographic with
    T before F).  Each loop may fire iter-T at most ``unroll`` times per
    path; the state that would exceed the budget becomes an
    ``UNROLL_EXHAUSTED`` outcome carrying the configuration at the cut.
    """
    if unroll < 0:
        raise ValueError("unroll budget must be non-negative")
    stack = [SymState(_core(p), Configuration.initial(p.n))]
    outcomes: list[PathOutcome] = []
    while stack:
        s = stack.pop()
        if s.exhausted:
            outcomes.append(PathOutcome(s.cfg, Status.UNROLL_EXHAUSTED, s.choices))
        elif s.final:
            outcomes.append(PathOutcome(s.cfg, Status.FINAL, s.choices))
        else:
            stack.extend(reversed(step(s, unroll)))
            continue
        if len(outcomes) > max_paths:
            raise BudgetError(f"more than {max_paths} symbolic paths")
    return outcomes


# --- big-step enumeration --------------------------------------------------

def _compose(first: Configuration, second: Configuration) -> Configuration:
    """Run ``first`` then ``second`` (both computed from the initial configuration)."""
    sigma, ky, kz = first.subst, first.k_y, first.k_z
    return Configuration(
        tuple(rebase(se, sigma, ky, kz) for se in second.subst),
        ky + second.k_y,
        kz + second.k_z,
        first.pc + tuple(rebase_bool(b, sigma, ky, kz) for b in second.pc),
        first.po + tuple(rebase_bool(b, sigma, ky, kz) for b in second.po),
    )


def _bigstep(s: Stmt, n: int) -> list[Configuration]:
    ident = identity_subst(n)
    if isinstance(s, Skip):
        return [Configuration(ident)]
    if isinstance(s, Assign):
        return [Configuration(update_subst(ident, s.var, s.expr))]
    if isinstance(s, SampleUniform):
        return [Configuration(update_subst(ident, s.var, SampleVar(UNIFORM, 0)), k_y=1)]
    if isinstance(s, SampleStdNormal):
        return [Configuration(update_subst(ident, s.var, SampleVar(NORMAL, 0)), k_z=1)]
    if isinstance(s, Observe):
        return [Configuration(ident, po=(s.cond,))]
    if isinstance(s, Seq):
        firsts = _bigstep(s.first, n)
        seconds = _bigstep(s.second, n)
        return [_compose(a, b) for a in firsts for b in seconds]
    if isinstance(s, If):
        yes = [replace(c, pc=(s.cond,) + c.pc) for c in _bigstep(s.then, n)]
        no = [replace(c, pc=(Not(s.cond),) + c.pc) for c in _bigstep(s.orelse, n)]
        return yes + no
    if isinstance(s, While):
        raise UnsupportedLoop("big-step enumeration needs a loop-free program")
    raise TypeError(f"not a core statement: {s!r}")


def bigstep_enumerate(p: Program) -> list[Configuration]:
    """Compositional enumeration of the final configurations of a loop-free
    program, built by structural recursion instead of by stepping."""
    body = _core(p)
    if has_loops(body):
        raise UnsupportedLoop("big-step enumeration needs a loop-free program")
    return _bigstep(body, p.n)


# --- printing --------------------------------------------------------------

_NEGATED = {"<": ">=", "<=": ">", "=": "!=", "!=": "=", ">=": "<", ">": "<="}


def format_sym_bool(b: BoolExpr, names: Sequence[str]) -> str:
    """Like :func:`format_bool`, but a negated comparison prints as the
    complementary relation (``!(y0 < 0.51)`` shows as ``y0 >= 0.51``)."""
    if isinstance(b, Not) and isinstance(b.arg, Cmp):
        c = b.arg
        return format_bool(Cmp(_NEGATED[c.rel], c.lhs, c.rhs), names)
    return format_bool(b, names)


def format_conj(conj: tuple, names: Sequence[str]) -> str:
    if not conj:
        return "true"
    parts = []
    for b in conj:
        text = format_sym_bool(b, names)
        if not isinstance(b, (Cmp, Not)) and " " in text:
            text = f"({text})"
        parts.append(text)
    return " ∧ ".join(parts)


def format_subst(sigma: Substitution, names: Sequence[str]) -> str:
    body = ", ".join(f"{names[i]} ↦ {format_expr(se, names)}" for i, se in enumerate(sigma))
    return "{" + body + "}"
