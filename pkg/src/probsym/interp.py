"""Interpretation of expressions, symbolic terms and substitutions.

Symbolic expressions reuse the program-expression nodes and add one leaf,
:class:`SampleVar`, standing for the k-th draw of a primitive distribution
(``y_k`` uniform on [0, 1], ``z_k`` standard normal).  A substitution is a
tuple holding one symbolic expression per program variable.

Everything evaluates in binary64.  Rational constants are converted at the
leaves and ``=`` compares the resulting doubles exactly.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from statistics import NormalDist
from typing import Callable, Iterable, Sequence

import numpy as np

from .syntax import (And, BFalse, BoolExpr, BTrue, Cmp, Const, Expr, Not, Op,
                     Or, Var)

UNIFORM = "y"
NORMAL = "z"

_STD_NORMAL = NormalDist()


class DomainError(ArithmeticError):
    """An operator was applied outside its domain (``sqrt`` of a negative)."""


@dataclass(frozen=True)
class SampleVar:
    dist: str   # UNIFORM or NORMAL
    index: int

    def __post_init__(self):
        if self.dist not in (UNIFORM, NORMAL):
            raise ValueError(f"unknown primitive distribution {self.dist!r}")
        if self.index < 0:
            raise ValueError("sample index must be non-negative")

    @property
    def label(self) -> str:
        return f"{self.dist}{self.index}"


def y(k: int) -> SampleVar:
    return SampleVar(UNIFORM, k)


def z(k: int) -> SampleVar:
    return SampleVar(NORMAL, k)


# --- valuations ------------------------------------------------------------

def _uniform_open(rng: random.Random) -> float:
    # (0, 1) so that the inverse normal CDF is always defined
    return (rng.getrandbits(53) + 0.5) / 9007199254740992.0


class Stream:
    """Append-only sequence of samples, extended on demand by ``draw``."""

    def __init__(self, draw: Callable[[], float], values: Iterable[float] = ()):
        self.values = [float(v) for v in values]
        self._draw = draw

    def __getitem__(self, k: int) -> float:
        values = self.values
        while len(values) <= k:
            values.append(self._draw())
        return values[k]

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def uniform(cls, seed, values=()):
        rng = random.Random(f"{seed}/uniform")
        return cls(lambda: _uniform_open(rng), values)

    @classmethod
    def normal(cls, seed, values=()):
        rng = random.Random(f"{seed}/normal")
        return cls(lambda: _STD_NORMAL.inv_cdf(_uniform_open(rng)), values)


class Valuation:
    """A point of R^(n+omega): program-variable values plus two sample streams.

    The streams are shared with every valuation derived by shifting, so a
    shifted valuation reads exactly the tail of the original one, including
    draws made after the shift.
    """

    __slots__ = ("vars", "uni_stream", "nrm_stream", "uni_offset", "nrm_offset")

    def __init__(self, vars: Sequence[float], uni_stream: Stream, nrm_stream: Stream,
                 uni_offset: int = 0, nrm_offset: int = 0):
        self.vars = tuple(float(v) for v in vars)
        self.uni_stream = uni_stream
        self.nrm_stream = nrm_stream
        self.uni_offset = uni_offset
        self.nrm_offset = nrm_offset

    @classmethod
    def make(cls, vars: Sequence[float] = (), uni: Sequence[float] = (),
             nrm: Sequence[float] = (), seed=0) -> "Valuation":
        """Valuation with the given stream prefixes; later draws come from ``seed``."""
        for u in uni:
            if not 0.0 <= u <= 1.0:
                raise ValueError(f"uniform sample {u} outside [0, 1]")
        return cls(vars, Stream.uniform(seed, uni), Stream.normal(seed, nrm))

    @classmethod
    def random(cls, n: int, seed, scale: float = 1.0) -> "Valuation":
        rng = random.Random(f"{seed}/vars")
        vars = [rng.gauss(0.0, scale) for _ in range(n)]
        return cls.make(vars, seed=seed)

    @property
    def n(self) -> int:
        return len(self.vars)

    def uni_at(self, k: int) -> float:
        return self.uni_stream[self.uni_offset + k]

    def nrm_at(self, k: int) -> float:
        return self.nrm_stream[self.nrm_offset + k]

    def uni(self, count: int) -> list[float]:
        return [self.uni_at(k) for k in range(count)]

    def nrm(self, count: int) -> list[float]:
        return [self.nrm_at(k) for k in range(count)]

    def shifted(self, vars: Sequence[float], k_y: int, k_z: int) -> "Valuation":
        return Valuation(vars, self.uni_stream, self.nrm_stream,
                         self.uni_offset + k_y, self.nrm_offset + k_z)

    def with_vars(self, vars: Sequence[float]) -> "Valuation":
        return self.shifted(vars, 0, 0)

    def __repr__(self):
        return (f"Valuation(vars={list(self.vars)}, uni@{self.uni_offset}, "
                f"nrm@{self.nrm_offset})")


# --- concrete evaluation ---------------------------------------------------

def _apply(op: str, args: list[float]) -> float:
    if op == "+":
        return args[0] + args[1]
    if op == "-":
        return args[0] - args[1]
    if op == "*":
        return args[0] * args[1]
    if op == "neg":
        return -args[0]
    if op == "sqrt":
        if args[0] < 0:
            raise DomainError(f"sqrt of negative value {args[0]!r}")
        return math.sqrt(args[0])
    raise ValueError(f"unknown operator {op!r}")


def _compare(rel: str, a: float, b: float) -> bool:
    if rel == "<":
        return a < b
    if rel == "<=":
        return a <= b
    if rel == "=":
        return a == b
    if rel == "!=":
        return a != b
    if rel == ">=":
        return a >= b
    if rel == ">":
        return a > b
    raise ValueError(f"unknown relation {rel!r}")


def eval_expr(e: Expr, vals: Sequence[float]) -> float:
    if isinstance(e, Const):
        return float(e.value)
    if isinstance(e, Var):
        return vals[e.index]
    if isinstance(e, Op):
        return _apply(e.op, [eval_expr(a, vals) for a in e.args])
    raise TypeError(f"not a program expression: {e!r}")


def eval_bool(b: BoolExpr, vals: Sequence[float]) -> bool:
    if isinstance(b, Cmp):
        return _compare(b.rel, eval_expr(b.lhs, vals), eval_expr(b.rhs, vals))
    if isinstance(b, BTrue):
        return True
    if isinstance(b, BFalse):
        return False
    if isinstance(b, And):
        return eval_bool(b.left, vals) and eval_bool(b.right, vals)
    if isinstance(b, Or):
        return eval_bool(b.left, vals) or eval_bool(b.right, vals)
    if isinstance(b, Not):
        return not eval_bool(b.arg, vals)
    raise TypeError(f"not a Boolean expression: {b!r}")


def eval_sym_expr(se, rho: Valuation) -> float:
    if isinstance(se, Const):
        return float(se.value)
    if isinstance(se, Var):
        return rho.vars[se.index]
    if isinstance(se, SampleVar):
        return rho.uni_at(se.index) if se.dist == UNIFORM else rho.nrm_at(se.index)
    if isinstance(se, Op):
        return _apply(se.op, [eval_sym_expr(a, rho) for a in se.args])
    raise TypeError(f"not a symbolic expression: {se!r}")


def eval_sym_bool(sb, rho: Valuation) -> bool:
    if isinstance(sb, Cmp):
        return _compare(sb.rel, eval_sym_expr(sb.lhs, rho), eval_sym_expr(sb.rhs, rho))
    if isinstance(sb, BTrue):
        return True
    if isinstance(sb, BFalse):
        return False
    if isinstance(sb, And):
        return eval_sym_bool(sb.left, rho) and eval_sym_bool(sb.right, rho)
    if isinstance(sb, Or):
        return eval_sym_bool(sb.left, rho) or eval_sym_bool(sb.right, rho)
    if isinstance(sb, Not):
        return not eval_sym_bool(sb.arg, rho)
    raise TypeError(f"not a symbolic Boolean expression: {sb!r}")


def holds_all(constraints: Iterable, rho: Valuation) -> bool:
    """Membership of ``rho`` in the conjunction of ``constraints``."""
    return all(eval_sym_bool(c, rho) for c in constraints)


# --- substitutions ---------------------------------------------------------

Substitution = tuple


def identity_subst(n: int) -> Substitution:
    return tuple(Var(i) for i in range(n))


def update_subst(sigma: Substitution, i: int, se) -> Substitution:
    return sigma[:i] + (se,) + sigma[i + 1:]


def apply_subst(sigma: Substitution, e):
    if isinstance(e, Var):
        return sigma[e.index]
    if isinstance(e, Op):
        return Op(e.op, tuple(apply_subst(sigma, a) for a in e.args))
    return e


def apply_subst_bool(sigma: Substitution, b):
    if isinstance(b, Cmp):
        return Cmp(b.rel, apply_subst(sigma, b.lhs), apply_subst(sigma, b.rhs))
    if isinstance(b, And):
        return And(apply_subst_bool(sigma, b.left), apply_subst_bool(sigma, b.right))
    if isinstance(b, Or):
        return Or(apply_subst_bool(sigma, b.left), apply_subst_bool(sigma, b.right))
    if isinstance(b, Not):
        return Not(apply_subst_bool(sigma, b.arg))
    return b


def rebase(se, sigma: Substitution, k_y: int, k_z: int):
    """Express ``se`` (read after a prefix with effect ``sigma``, ``k_y``,
    ``k_z``) over the initial state: variables go through ``sigma`` and
    sample indices move past the prefix's draws."""
    if isinstance(se, Var):
        return sigma[se.index]
    if isinstance(se, SampleVar):
        shift = k_y if se.dist == UNIFORM else k_z
        return SampleVar(se.dist, se.index + shift) if shift else se
    if isinstance(se, Op):
        return Op(se.op, tuple(rebase(a, sigma, k_y, k_z) for a in se.args))
    return se


def rebase_bool(sb, sigma: Substitution, k_y: int, k_z: int):
    if isinstance(sb, Cmp):
        return Cmp(sb.rel, rebase(sb.lhs, sigma, k_y, k_z), rebase(sb.rhs, sigma, k_y, k_z))
    if isinstance(sb, And):
        return And(rebase_bool(sb.left, sigma, k_y, k_z), rebase_bool(sb.right, sigma, k_y, k_z))
    if isinstance(sb, Or):
        return Or(rebase_bool(sb.left, sigma, k_y, k_z), rebase_bool(sb.right, sigma, k_y, k_z))
    if isinstance(sb, Not):
        return Not(rebase_bool(sb.arg, sigma, k_y, k_z))
    return sb


def interpret_subst(sigma: Substitution, k_y: int, k_z: int, rho: Valuation) -> Valuation:
    """The state transformer of ``sigma`` at sampling indices ``(k_y, k_z)``:
    new variable values, and each sample stream left-shifted past the
    draws already made."""
    vals = [eval_sym_expr(se, rho) for se in sigma]
    return rho.shifted(vals, k_y, k_z)


# --- inspection ------------------------------------------------------------

def iter_leaves(t):
    """Leaves of an expression or Boolean tree."""
    if isinstance(t, Op):
        for a in t.args:
            yield from iter_leaves(a)
    elif isinstance(t, Cmp):
        yield from iter_leaves(t.lhs)
        yield from iter_leaves(t.rhs)
    elif isinstance(t, (And, Or)):
        yield from iter_leaves(t.left)
        yield from iter_leaves(t.right)
    elif isinstance(t, Not):
        yield from iter_leaves(t.arg)
    elif isinstance(t, (Const, Var, SampleVar)):
        yield t


def sample_counts(terms: Iterable) -> tuple[int, int]:
    """One past the largest uniform and normal sample index used by ``terms``."""
    k_y = k_z = 0
    for t in terms:
        for leaf in iter_leaves(t):
            if isinstance(leaf, SampleVar):
                if leaf.dist == UNIFORM:
                    k_y = max(k_y, leaf.index + 1)
                else:
                    k_z = max(k_z, leaf.index + 1)
    return k_y, k_z


def program_vars(terms: Iterable) -> set[int]:
    return {leaf.index for t in terms for leaf in iter_leaves(t) if isinstance(leaf, Var)}


# --- batched evaluation ----------------------------------------------------
# Column-wise versions of the evaluators above over N points at once.  Lanes
# hitting sqrt of a negative are flagged in ``errors`` and yield nan.

_NP_OPS = {"+": np.add, "-": np.subtract, "*": np.multiply}
_NP_RELS = {"<": np.less, "<=": np.less_equal, "=": np.equal,
            "!=": np.not_equal, ">=": np.greater_equal, ">": np.greater}


class Batch:
    """N points of R^(n+omega): ``vars`` has shape (n, N); the sample
    columns are produced by ``uni_col``/``nrm_col`` and cached."""

    def __init__(self, vars: np.ndarray, uni_col: Callable[[int], np.ndarray],
                 nrm_col: Callable[[int], np.ndarray]):
        self.vars = vars
        self.size = vars.shape[1]
        self._uni_col = uni_col
        self._nrm_col = nrm_col
        self._cols: dict = {}
        self.errors = np.zeros(self.size, dtype=bool)

    def column(self, sv: SampleVar) -> np.ndarray:
        key = (sv.dist, sv.index)
        col = self._cols.get(key)
        if col is None:
            col = (self._uni_col if sv.dist == UNIFORM else self._nrm_col)(sv.index)
            self._cols[key] = col
        return col


def eval_expr_batch(se, batch: Batch):
    if isinstance(se, Const):
        return float(se.value)
    if isinstance(se, Var):
        return batch.vars[se.index]
    if isinstance(se, SampleVar):
        return batch.column(se)
    if isinstance(se, Op):
        args = [eval_expr_batch(a, batch) for a in se.args]
        with np.errstate(all="ignore"):
            if se.op in _NP_OPS:
                return _NP_OPS[se.op](args[0], args[1])
            if se.op == "neg":
                return np.negative(args[0])
            if se.op == "sqrt":
                bad = np.less(args[0], 0)
                if np.any(bad):
                    batch.errors |= np.broadcast_to(bad, batch.errors.shape)
                return np.sqrt(np.where(bad, np.nan, args[0]))
    raise TypeError(f"not a symbolic expression: {se!r}")


def eval_bool_batch(sb, batch: Batch) -> np.ndarray:
    n = batch.size
    if isinstance(sb, Cmp):
        with np.errstate(all="ignore"):
            out = _NP_RELS[sb.rel](eval_expr_batch(sb.lhs, batch), eval_expr_batch(sb.rhs, batch))
        return np.broadcast_to(out, (n,))
    if isinstance(sb, BTrue):
        return np.ones(n, dtype=bool)
    if isinstance(sb, BFalse):
        return np.zeros(n, dtype=bool)
    if isinstance(sb, And):
        return eval_bool_batch(sb.left, batch) & eval_bool_batch(sb.right, batch)
    if isinstance(sb, Or):
        return eval_bool_batch(sb.left, batch) | eval_bool_batch(sb.right, batch)
    if isinstance(sb, Not):
        return ~eval_bool_batch(sb.arg, batch)
    raise TypeError(f"not a symbolic Boolean expression: {sb!r}")
