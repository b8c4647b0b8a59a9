"""Probability mass of symbolic paths under mu (x) lambda^omega.

Each path of a program contributes the mass of the inputs that follow it
(path condition), survive its observations (path observation) and land in a
query set; summing over paths gives the unnormalized output measure of the
query.  Masses are computed in closed form when the constraint set is
*separable*: every atom is an affine comparison in a single random quantity
(a sample ``y_k``/``z_k`` or a program variable that is random under mu).
Anything else falls back to Monte Carlo.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtri

from .concrete import (Point, StdNormal, Uniform01, MeasureSpec, Terminated,
                       Aborted, point_measure, run_concrete)
from .interp import (NORMAL, UNIFORM, Batch, DomainError, SampleVar, Valuation,
                     apply_subst_bool, eval_bool, eval_bool_batch, eval_expr,
                     eval_sym_bool, iter_leaves, sample_counts)
from .symexec import PathOutcome, Status, explore
from .syntax import (And, BFalse, BoolExpr, BTrue, Cmp, Const, If, Not, Observe,
                     Op, Or, Program, SampleBern, SampleNorm, SampleStdNormal,
                     SampleUniform, Seq, Skip, Assign, Var, While, desugar,
                     walk_stmts)

log = logging.getLogger(__name__)

EXACT = "exact"
MONTE_CARLO = "monte-carlo"


class NotSeparable(Exception):
    """The constraint set is outside the closed-form fragment."""


class ZeroEvidence(ZeroDivisionError):
    """The program keeps no probability mass, so there is nothing to normalize."""


class NotDiscrete(ValueError):
    """The program is not a loop-free Bernoulli-only program."""


@dataclass(frozen=True)
class MassEstimate:
    value: float
    method: str = EXACT
    stderr: float = 0.0
    samples_used: int = 0
    # exact rational value when every factor was rational
    rational: Fraction | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"mass {self.value} outside [0, 1]")
        if self.method == EXACT and self.stderr != 0.0:
            raise ValueError("exact estimates carry no standard error")

    @property
    def exact(self) -> bool:
        return self.method == EXACT


# --- standard normal distribution -----------------------------------------
# math.erfc is the platform libm erfc (fdlibm-derived rational approximations
# in glibc, accurate to a couple of ulp), so these are good to ~1e-16
# absolute; the upper tail uses erfc directly to avoid cancellation.

_SQRT1_2 = math.sqrt(0.5)


def normal_cdf(x: float) -> float:
    if x == math.inf:
        return 1.0
    if x == -math.inf:
        return 0.0
    return 0.5 * math.erfc(-x * _SQRT1_2)


def normal_sf(x: float) -> float:
    return normal_cdf(-x)


def normal_mass(lo: float, hi: float) -> float:
    if hi <= lo:
        return 0.0
    if lo >= 0.0:
        return max(0.0, normal_sf(lo) - normal_sf(hi))
    return max(0.0, normal_cdf(hi) - normal_cdf(lo))


# --- separability analysis -------------------------------------------------

_FLIP = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "=": "=", "!=": "!="}
_NEGATE = {"<": ">=", "<=": ">", "=": "!=", "!=": "=", ">=": "<", ">": "<="}


def _rational_value(e, points):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return Fraction(points[e.index])    # ValueError for nan
    if isinstance(e, Op) and e.op != "sqrt":
        a = [_rational_value(x, points) for x in e.args]
        if e.op == "+":
            return a[0] + a[1]
        if e.op == "-":
            return a[0] - a[1]
        if e.op == "*":
            return a[0] * a[1]
        return -a[0]
    raise ValueError("no exact rational value")


class _Analysis:
    def __init__(self, measure: MeasureSpec):
        self.measure = measure
        self.point_vals = [m.value if isinstance(m, Point) else math.nan for m in measure]

    def key(self, leaf):
        """Random-quantity key of a leaf, or None for a fixed one."""
        if isinstance(leaf, SampleVar):
            return (leaf.dist, leaf.index)
        if isinstance(leaf, Var):
            if leaf.index >= len(self.measure):
                raise ValueError(f"variable index {leaf.index} outside the measure")
            m = self.measure[leaf.index]
            if isinstance(m, Point):
                return None
            return ("x", leaf.index)
        return None

    def is_fixed(self, t) -> bool:
        return all(self.key(leaf) is None for leaf in iter_leaves(t))

    def fixed_truth(self, b) -> bool:
        # same floating-point evaluation as the concrete interpreter
        return eval_bool(b, self.point_vals)

    def fixed_value(self, e):
        """Exact rational value of a fixed sqrt-free term, else its float value."""
        try:
            return _rational_value(e, self.point_vals)
        except (ValueError, OverflowError):
            return eval_expr(e, self.point_vals)

    def linear(self, e):
        """``e`` as (coefficients by random key, constant), or NotSeparable."""
        if self.is_fixed(e):
            return {}, self.fixed_value(e)
        if isinstance(e, (SampleVar, Var)):
            return {self.key(e): Fraction(1)}, Fraction(0)
        if isinstance(e, Op):
            if e.op in ("+", "-"):
                (ca, a), (cb, b) = self.linear(e.args[0]), self.linear(e.args[1])
                sign = 1 if e.op == "+" else -1
                coeffs = dict(ca)
                for k, v in cb.items():
                    coeffs[k] = coeffs.get(k, 0) + sign * v
                return coeffs, a + sign * b
            if e.op == "neg":
                c, a = self.linear(e.args[0])
                return {k: -v for k, v in c.items()}, -a
            if e.op == "*":
                left, right = e.args
                if self.is_fixed(left):
                    factor, (c, a) = self.fixed_value(left), self.linear(right)
                elif self.is_fixed(right):
                    factor, (c, a) = self.fixed_value(right), self.linear(left)
                else:
                    raise NotSeparable("product of two random quantities")
                return {k: v * factor for k, v in c.items()}, a * factor
        raise NotSeparable(f"non-affine term {e!r}")

    def literals(self, b, positive: bool = True) -> list:
        """Conjunction of comparisons equivalent to ``b`` (or its negation)."""
        if self.is_fixed(b):
            return [] if self.fixed_truth(b) == positive else [False]
        if isinstance(b, Cmp):
            return [(b.rel if positive else _NEGATE[b.rel], b.lhs, b.rhs)]
        if isinstance(b, Not):
            return self.literals(b.arg, not positive)
        if isinstance(b, And) and positive or isinstance(b, Or) and not positive:
            return self.literals(b.left, positive) + self.literals(b.right, positive)
        if isinstance(b, (And, Or)):
            # a disjunction is separable only when one side is fixed
            for side, other in ((b.left, b.right), (b.right, b.left)):
                if self.is_fixed(side):
                    if self.fixed_truth(side) == positive:
                        # the disjunct holds outright
                        return []
                    return self.literals(other, positive)
            raise NotSeparable("disjunction over random quantities")
        raise TypeError(f"not a symbolic Boolean expression: {b!r}")


def _interval_mass(kind, lo: float, hi: float):
    """(float mass, rational mass or None) of [lo, hi] for one random quantity."""
    if kind == UNIFORM or isinstance(kind, Uniform01):
        lo_c, hi_c = min(max(lo, 0.0), 1.0), min(max(hi, 0.0), 1.0)
        if hi_c <= lo_c:
            return 0.0, Fraction(0)
        q = Fraction(hi_c) - Fraction(lo_c)
        return float(q), q
    if kind == NORMAL or isinstance(kind, StdNormal):
        if lo == -math.inf and hi == math.inf:
            return 1.0, Fraction(1)
        m = normal_mass(lo, hi)
        return m, (Fraction(0) if m == 0.0 else None)
    raise TypeError(f"unknown random quantity {kind!r}")


def exact_separable_mass(constraints: Iterable, measure: MeasureSpec) -> MassEstimate:
    """Closed-form mass of a conjunction; raises :class:`NotSeparable`."""
    an = _Analysis(measure)
    bounds: dict = {}
    for c in constraints:
        for lit in an.literals(c):
            if lit is False:
                return MassEstimate(0.0, EXACT, rational=Fraction(0))
            rel, lhs, rhs = lit
            cl, al = an.linear(lhs)
            cr, ar = an.linear(rhs)
            coeffs = dict(cl)
            for k, v in cr.items():
                coeffs[k] = coeffs.get(k, 0) - v
            coeffs = {k: v for k, v in coeffs.items() if v != 0.0}
            const = al - ar
            if not coeffs:
                if not _holds(rel, const, 0.0):
                    return MassEstimate(0.0, EXACT, rational=Fraction(0))
                continue
            if len(coeffs) > 1:
                raise NotSeparable("comparison between several random quantities")
            (key, a), = coeffs.items()
            if not math.isfinite(a) or not math.isfinite(const):
                raise NotSeparable("non-finite coefficient")
            r = -const / a
            if a < 0:
                rel = _FLIP[rel]
            lo, hi = bounds.get(key, (-math.inf, math.inf))
            if rel in ("<", "<="):
                hi = min(hi, r)
            elif rel in (">", ">="):
                lo = max(lo, r)
            elif rel == "=":
                log.warning("equality on a continuous quantity has probability zero")
                lo, hi = max(lo, r), min(hi, r)
            # "!=" removes a single point: no mass
            bounds[key] = (lo, hi)
    value, rational = 1.0, Fraction(1)
    for key, (lo, hi) in bounds.items():
        kind = key[0] if key[0] != "x" else measure[key[1]]
        m, q = _interval_mass(kind, lo, hi)
        value *= m
        rational = None if rational is None or q is None else rational * q
    if rational is not None:
        value = float(rational)
    return MassEstimate(min(max(value, 0.0), 1.0), EXACT, rational=rational)


def _holds(rel: str, a: float, b: float) -> bool:
    return {"<": a < b, "<=": a <= b, "=": a == b, "!=": a != b,
            ">=": a >= b, ">": a > b}[rel]


# --- Monte Carlo -------------------------------------------------------------

def _column(seed: int, dist: str, k: int, start: int, size: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1 if dist == UNIFORM else 2, k, start)))
    u = (rng.integers(0, 2**53, size=size, dtype=np.int64) + 0.5) * 2.0**-53
    return u if dist == UNIFORM else ndtri(u)


def mc_mass(constraints: Sequence, measure: MeasureSpec, trials: int = 100_000,
            seed: int = 0, chunk: int = 1 << 18) -> MassEstimate:
    """Indicator-average estimate of the mass of a conjunction."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    constraints = list(constraints)
    hits = 0
    for start in range(0, trials, chunk):
        size = min(chunk, trials - start)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, start)))
        vals = np.empty((len(measure), size))
        for i, m in enumerate(measure):
            if isinstance(m, Point):
                vals[i] = m.value
            elif isinstance(m, Uniform01):
                vals[i] = rng.random(size)
            else:
                vals[i] = rng.standard_normal(size)
        batch = Batch(vals, lambda k, s=start, n=size: _column(seed, UNIFORM, k, s, n),
                      lambda k, s=start, n=size: _column(seed, NORMAL, k, s, n))
        inside = np.ones(size, dtype=bool)
        for c in constraints:
            inside &= eval_bool_batch(c, batch)
        inside &= ~batch.errors
        hits += int(np.count_nonzero(inside))
    p = hits / trials
    return MassEstimate(p, MONTE_CARLO, math.sqrt(p * (1 - p) / trials), trials)


def path_mass(constraints: Sequence, measure: MeasureSpec, trials: int = 100_000,
              seed: int = 0) -> MassEstimate:
    """Exact mass when separable, Monte Carlo otherwise."""
    try:
        return exact_separable_mass(constraints, measure)
    except NotSeparable:
        return mc_mass(constraints, measure, trials, seed)


# --- summing over paths ------------------------------------------------------

@dataclass(frozen=True)
class PathMassReport:
    choices: str
    prior: MassEstimate
    joint: MassEstimate
    query: MassEstimate | None = None


@dataclass
class PathSumResult:
    total: MassEstimate
    paths: list           # PathMassReport per final path, canonical order
    truncation: MassEstimate   # mass still inside unfinished loops
    outcomes: list = field(repr=False, default_factory=list)


def sum_masses(estimates: Sequence[MassEstimate]) -> MassEstimate:
    """Sum with root-sum-square standard error; exact rational when possible."""
    if not estimates:
        return MassEstimate(0.0, EXACT, rational=Fraction(0))
    exact = all(e.exact for e in estimates)
    if exact and all(e.rational is not None for e in estimates):
        q = sum((e.rational for e in estimates), Fraction(0))
        return MassEstimate(min(float(q), 1.0), EXACT, rational=q)
    value = min(max(math.fsum(e.value for e in estimates), 0.0), 1.0)
    if exact:
        return MassEstimate(value, EXACT)
    stderr = math.sqrt(math.fsum(e.stderr ** 2 for e in estimates))
    return MassEstimate(value, MONTE_CARLO, stderr, sum(e.samples_used for e in estimates))


def _seed(seed: int, *parts: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=parts).generate_state(1, np.uint64)[0] >> 1)


def theorem2_sum(p: Program, measure: MeasureSpec | None = None, query: BoolExpr | None = None,
                 unroll: int = 4, max_paths: int = 100_000, mc_trials: int = 100_000,
                 seed: int = 0, outcomes: Sequence[PathOutcome] | None = None) -> PathSumResult:
    """Mass of the output event ``query`` (everything when None), summed over
    the final symbolic paths of ``p``.

    Each path contributes the mass of pc /\\ po /\\ subst(query).  Paths cut
    by the unroll budget are not summed; their pc /\\ po mass is returned as
    ``truncation``, an upper bound on what the bounded exploration misses.
    """
    if measure is None:
        measure = point_measure(p.n)
    if outcomes is None:
        outcomes = explore(p, unroll, max_paths)
    reports, contributions, cut = [], [], []
    for i, o in enumerate(outcomes):
        cfg = o.cfg
        joint_set = cfg.pc + cfg.po
        if o.status is Status.UNROLL_EXHAUSTED:
            cut.append(path_mass(joint_set, measure, mc_trials, _seed(seed, i, 3)))
            continue
        prior = path_mass(cfg.pc, measure, mc_trials, _seed(seed, i, 0))
        joint = path_mass(joint_set, measure, mc_trials, _seed(seed, i, 1))
        q = None
        if query is not None:
            pulled = apply_subst_bool(cfg.subst, query)
            q = path_mass(joint_set + (pulled,), measure, mc_trials, _seed(seed, i, 2))
        reports.append(PathMassReport(o.choices, prior, joint, q))
        contributions.append(joint if q is None else q)
    return PathSumResult(sum_masses(contributions), reports, sum_masses(cut), list(outcomes))


@dataclass(frozen=True)
class Posterior:
    value: float
    stderr: float
    method: str
    numerator: MassEstimate
    evidence: MassEstimate


def posterior(p: Program, measure: MeasureSpec | None = None, query: BoolExpr | None = None,
              unroll: int = 4, max_paths: int = 100_000, mc_trials: int = 100_000,
              seed: int = 0, outcomes: Sequence[PathOutcome] | None = None) -> Posterior:
    """Normalized probability of ``query`` given that no observation failed."""
    if outcomes is None:
        outcomes = explore(p, unroll, max_paths)
    kw = dict(measure=measure, unroll=unroll, max_paths=max_paths,
              mc_trials=mc_trials, seed=seed, outcomes=outcomes)
    evidence = theorem2_sum(p, query=None, **kw).total
    num = evidence if query is None else theorem2_sum(p, query=query, **kw).total
    if evidence.value == 0.0:
        raise ZeroEvidence("no probability mass passes the observations")
    if evidence.rational is not None and num.rational is not None:
        ratio = num.rational / evidence.rational
        return Posterior(float(ratio), 0.0, EXACT, num, evidence)
    value = min(num.value / evidence.value, 1.0)
    if num.exact and evidence.exact:
        return Posterior(value, 0.0, EXACT, num, evidence)
    rel = 0.0
    if num.value > 0:
        rel += (num.stderr / num.value) ** 2
    rel += (evidence.stderr / evidence.value) ** 2
    return Posterior(value, value * math.sqrt(rel), MONTE_CARLO, num, evidence)


# --- brute-force discrete oracle ---------------------------------------------

@dataclass
class DiscreteDistribution:
    """Unnormalized output distribution: terminal valuation -> mass."""
    terminal: dict
    aborted: float
    names: tuple = ()

    def mass(self, a: BoolExpr | None = None) -> float:
        if a is None:
            return math.fsum(self.terminal.values())
        return math.fsum(w for vals, w in self.terminal.items() if eval_bool(a, vals))

    @property
    def total(self) -> float:
        return self.mass() + self.aborted


def _check_discrete(p: Program, measure: MeasureSpec) -> None:
    for s in walk_stmts(p.body):
        if isinstance(s, (SampleUniform, SampleStdNormal, SampleNorm)):
            raise NotDiscrete("only bern sampling is supported")
        if isinstance(s, While):
            raise NotDiscrete("loops are not supported")
        if isinstance(s, SampleBern):
            used = {leaf.index for leaf in iter_leaves(s.prob) if isinstance(leaf, Var)}
            if s.var in used:
                raise NotDiscrete("a bern bias may not mention the variable it samples")
    if not all(isinstance(m, Point) for m in measure):
        raise NotDiscrete("the input measure must be a point mass")


def _bern_paths(s, vals: list, weight: float, uniforms: list):
    """All runs of ``s`` as (vals or None when aborted, weight, uniform draws)."""
    if isinstance(s, Seq):
        for v1, w1, u1 in _bern_paths(s.first, vals, weight, uniforms):
            if v1 is None:
                yield None, w1, u1
            else:
                yield from _bern_paths(s.second, v1, w1, u1)
    elif isinstance(s, Skip):
        yield vals, weight, uniforms
    elif isinstance(s, Assign):
        out = list(vals)
        out[s.var] = eval_expr(s.expr, vals)
        yield out, weight, uniforms
    elif isinstance(s, SampleBern):
        t = eval_expr(s.prob, vals)
        t = 0.0 if math.isnan(t) else min(max(t, 0.0), 1.0)
        if t > 0.0:
            out = list(vals)
            out[s.var] = 1.0
            yield out, weight * t, uniforms + [t / 2]
        if t < 1.0:
            out = list(vals)
            out[s.var] = 0.0
            yield out, weight * (1.0 - t), uniforms + [(1.0 + t) / 2]
    elif isinstance(s, Observe):
        yield (list(vals) if eval_bool(s.cond, vals) else None), weight, uniforms
    elif isinstance(s, If):
        branch = s.then if eval_bool(s.cond, vals) else s.orelse
        yield from _bern_paths(branch, vals, weight, uniforms)
    else:
        raise NotDiscrete(f"unsupported statement {s!r}")


def enumerate_discrete_oracle(p: Program, measure: MeasureSpec | None = None) -> DiscreteDistribution:
    """Exact output distribution of a loop-free Bernoulli-only program.

    Every combination of coin outcomes is enumerated with its probability;
    each one is replayed through the concrete interpreter on a uniform
    stream that realizes it (the midpoint of the chosen interval).
    """
    if measure is None:
        measure = point_measure(p.n)
    _check_discrete(p, measure)
    init = [m.value for m in measure]
    core = desugar(p.body)
    terminal: dict = {}
    aborted = []
    for vals, w, uniforms in _bern_paths(p.body, init, 1.0, []):
        if w == 0.0:
            continue
        run = run_concrete(core, Valuation.make(init, uni=uniforms))
        if isinstance(run, Aborted):
            if vals is not None:
                raise RuntimeError("enumeration and concrete run disagree")
            aborted.append(w)
        elif isinstance(run, Terminated):
            if vals is None or list(run.vals) != vals:
                raise RuntimeError("enumeration and concrete run disagree")
            terminal[run.vals] = terminal.get(run.vals, 0.0) + w
        else:
            raise NotDiscrete(f"concrete run failed: {run!r}")
    return DiscreteDistribution(terminal, math.fsum(aborted), p.vars)
