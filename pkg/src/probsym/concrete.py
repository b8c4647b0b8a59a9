"""Concrete semantics: run a program on one point of R^(n+omega), or
simulate it on many points drawn from an input measure.

A failed ``observe`` aborts the run.  Loops are bounded by ``fuel``, the
total number of loop iterations a run may perform; running out is reported
separately from aborting.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.special import ndtri

from .interp import (Batch, DomainError, Valuation, eval_bool, eval_bool_batch,
                     eval_expr, eval_expr_batch)
from .syntax import (Assign, BoolExpr, If, Observe, Program, SampleStdNormal,
                     SampleUniform, Seq, Skip, Stmt, While, desugar, is_core)

WILSON_Z = 1.959963984540054


# --- input measures --------------------------------------------------------

@dataclass(frozen=True)
class Point:
    value: float = 0.0


@dataclass(frozen=True)
class Uniform01:
    pass


@dataclass(frozen=True)
class StdNormal:
    pass


VarMeasure = Union[Point, Uniform01, StdNormal]
MeasureSpec = tuple   # one VarMeasure per program variable


def point_measure(n: int, value: float = 0.0) -> MeasureSpec:
    return tuple(Point(value) for _ in range(n))


def parse_var_measure(text: str) -> VarMeasure:
    """``point:V``, ``uniform01`` or ``stdnormal``."""
    text = text.strip()
    if text == "uniform01":
        return Uniform01()
    if text == "stdnormal":
        return StdNormal()
    if text.startswith("point:"):
        return Point(float(text[len("point:"):]))
    raise ValueError(f"bad measure {text!r}; expected point:V, uniform01 or stdnormal")


def build_measure(names: Sequence[str], assignments: Sequence[str] = ()) -> MeasureSpec:
    """Product measure from ``VAR=SPEC`` strings; unmentioned variables are point 0."""
    spec = dict.fromkeys(names, Point(0.0))
    for item in assignments:
        name, sep, rhs = item.partition("=")
        if not sep or name.strip() not in spec:
            raise ValueError(f"bad measure assignment {item!r}")
        spec[name.strip()] = parse_var_measure(rhs)
    return tuple(spec[n] for n in names)


def _draw_vars(measure: MeasureSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    out = np.empty((len(measure), size))
    for i, m in enumerate(measure):
        if isinstance(m, Point):
            out[i] = m.value
        elif isinstance(m, Uniform01):
            out[i] = rng.random(size)
        elif isinstance(m, StdNormal):
            out[i] = rng.standard_normal(size)
        else:
            raise TypeError(f"unknown variable measure {m!r}")
    return out


def sample_valuation(measure: MeasureSpec, seed: int) -> Valuation:
    """One point drawn from the input measure times the sample streams."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xA1,)))
    vals = _draw_vars(measure, rng, 1)[:, 0]
    return Valuation.make(vals, seed=seed)


# --- single runs -----------------------------------------------------------

@dataclass(frozen=True)
class Terminated:
    vals: tuple
    consumed: tuple   # (k_y, k_z)


@dataclass(frozen=True)
class Aborted:
    pass


@dataclass(frozen=True)
class OutOfFuel:
    pass


@dataclass(frozen=True)
class ErrorResult:
    message: str


RunResult = Union[Terminated, Aborted, OutOfFuel, ErrorResult]


class _Abort(Exception):
    pass


class _NoFuel(Exception):
    pass


class _Machine:
    def __init__(self, rho: Valuation, fuel: int):
        self.rho = rho
        self.vals = list(rho.vars)
        self.ky = 0
        self.kz = 0
        self.fuel = fuel

    def run(self, s: Stmt) -> None:
        while isinstance(s, Seq):
            self.run(s.first)
            s = s.second
        if isinstance(s, Skip):
            return
        if isinstance(s, Assign):
            self.vals[s.var] = eval_expr(s.expr, self.vals)
        elif isinstance(s, SampleUniform):
            self.vals[s.var] = self.rho.uni_at(self.ky)
            self.ky += 1
        elif isinstance(s, SampleStdNormal):
            self.vals[s.var] = self.rho.nrm_at(self.kz)
            self.kz += 1
        elif isinstance(s, Observe):
            if not eval_bool(s.cond, self.vals):
                raise _Abort
        elif isinstance(s, If):
            self.run(s.then if eval_bool(s.cond, self.vals) else s.orelse)
        elif isinstance(s, While):
            while eval_bool(s.cond, self.vals):
                if self.fuel <= 0:
                    raise _NoFuel
                self.fuel -= 1
                self.run(s.body)
        else:
            raise TypeError(f"not a core statement: {s!r}")


def _core(p) -> Stmt:
    body = p.body if isinstance(p, Program) else p
    return body if is_core(body) else desugar(body)


def run_concrete(p: Program | Stmt, rho: Valuation, fuel: int = 10_000) -> RunResult:
    m = _Machine(rho, fuel)
    try:
        m.run(_core(p))
    except _Abort:
        return Aborted()
    except _NoFuel:
        return OutOfFuel()
    except DomainError as exc:
        return ErrorResult(str(exc))
    return Terminated(tuple(m.vals), (m.ky, m.kz))


# --- simulation ------------------------------------------------------------

RUNNING, TERMINATED, ABORTED, OUT_OF_FUEL, ERROR = range(5)
STATUS_NAMES = {TERMINATED: "terminated", ABORTED: "aborted",
                OUT_OF_FUEL: "out_of_fuel", ERROR: "error"}


def _uniform_block(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.integers(0, 2**53, size=shape, dtype=np.int64) + 0.5) * 2.0**-53


class _SampleTable:
    """Per-lane sample streams, grown a block of columns at a time."""

    def __init__(self, rng: np.random.Generator, size: int, normal: bool):
        self.rng = rng
        self.size = size
        self.normal = normal
        self.table = np.empty((size, 0))

    def ensure(self, width: int) -> None:
        have = self.table.shape[1]
        if width <= have:
            return
        extra = max(width - have, 4, have)
        block = _uniform_block(self.rng, (self.size, extra))
        if self.normal:
            block = ndtri(block)
        self.table = np.concatenate([self.table, block], axis=1)


class _BatchMachine:
    def __init__(self, vals: np.ndarray, uni: _SampleTable, nrm: _SampleTable, fuel: int):
        self.vals = vals
        self.status = np.zeros(vals.shape[1], dtype=np.int8)
        self.ky = np.zeros(vals.shape[1], dtype=np.int64)
        self.kz = np.zeros(vals.shape[1], dtype=np.int64)
        self.iters = np.zeros(vals.shape[1], dtype=np.int64)
        self.uni = uni
        self.nrm = nrm
        self.fuel = fuel

    def _cond(self, b: BoolExpr, idx: np.ndarray):
        batch = Batch(self.vals[:, idx], _no_samples, _no_samples)
        held = eval_bool_batch(b, batch)
        bad = batch.errors
        if bad.any():
            self.status[idx[bad]] = ERROR
        return idx[held & ~bad], idx[~held & ~bad]

    def run(self, s: Stmt, idx: np.ndarray) -> np.ndarray:
        while isinstance(s, Seq):
            idx = self.run(s.first, idx)
            s = s.second
        if idx.size == 0 or isinstance(s, Skip):
            return idx
        if isinstance(s, Assign):
            batch = Batch(self.vals[:, idx], _no_samples, _no_samples)
            value = eval_expr_batch(s.expr, batch)
            self.vals[s.var, idx] = value
            bad = batch.errors
            if bad.any():
                self.status[idx[bad]] = ERROR
                idx = idx[~bad]
            return idx
        if isinstance(s, (SampleUniform, SampleStdNormal)):
            table, counter = (self.uni, self.ky) if isinstance(s, SampleUniform) else (self.nrm, self.kz)
            pos = counter[idx]
            table.ensure(int(pos.max()) + 1)
            self.vals[s.var, idx] = table.table[idx, pos]
            counter[idx] = pos + 1
            return idx
        if isinstance(s, Observe):
            ok, failed = self._cond(s.cond, idx)
            self.status[failed] = ABORTED
            return ok
        if isinstance(s, If):
            yes, no = self._cond(s.cond, idx)
            return np.sort(np.concatenate([self.run(s.then, yes), self.run(s.orelse, no)]))
        if isinstance(s, While):
            done = []
            active = idx
            while active.size:
                more, exited = self._cond(s.cond, active)
                done.append(exited)
                starving = self.iters[more] >= self.fuel
                self.status[more[starving]] = OUT_OF_FUEL
                more = more[~starving]
                self.iters[more] += 1
                active = self.run(s.body, more)
            return np.sort(np.concatenate(done)) if done else active
        raise TypeError(f"not a core statement: {s!r}")


def _no_samples(k: int):
    raise TypeError("program expressions cannot mention sample variables")


def wilson_interval(hits: int, trials: int, z: float = WILSON_Z) -> tuple[float, float]:
    if trials <= 0:
        return (0.0, 1.0)
    p = hits / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    # the endpoints are exact when every trial (or none) hit
    lo = 0.0 if hits == 0 else max(0.0, center - half)
    hi = 1.0 if hits == trials else min(1.0, center + half)
    return (lo, hi)


@dataclass
class SimulationResult:
    trials: int
    counts: dict
    status: np.ndarray = field(repr=False)
    final_vals: np.ndarray = field(repr=False)   # (n, trials); nan unless terminated
    consumed: np.ndarray = field(repr=False)     # (2, trials)
    query: BoolExpr | None = None
    query_hits: int | None = None

    def hits(self, a: BoolExpr) -> int:
        term = self.status == TERMINATED
        batch = Batch(self.final_vals[:, term], _no_samples, _no_samples)
        inside = eval_bool_batch(a, batch) & ~batch.errors
        return int(np.count_nonzero(inside))

    def frequency(self, a: BoolExpr | None = None) -> float:
        h = self.counts["terminated"] if a is None else self.hits(a)
        return h / self.trials

    def stderr(self, a: BoolExpr | None = None) -> float:
        p = self.frequency(a)
        return math.sqrt(p * (1 - p) / self.trials)

    def interval(self, a: BoolExpr | None = None) -> tuple[float, float]:
        h = self.counts["terminated"] if a is None else self.hits(a)
        return wilson_interval(h, self.trials)

    @property
    def query_frequency(self) -> float | None:
        return None if self.query_hits is None else self.query_hits / self.trials


def _simulate_shard(body: Stmt, measure: MeasureSpec, size: int, seq: np.random.SeedSequence, fuel: int):
    var_ss, uni_ss, nrm_ss = seq.spawn(3)
    vals = _draw_vars(measure, np.random.default_rng(var_ss), size)
    m = _BatchMachine(vals, _SampleTable(np.random.default_rng(uni_ss), size, False),
                      _SampleTable(np.random.default_rng(nrm_ss), size, True), fuel)
    done = m.run(body, np.arange(size))
    m.status[done] = TERMINATED
    m.vals[:, m.status != TERMINATED] = np.nan
    return m.status, m.vals, np.stack([m.ky, m.kz])


def simulate(p: Program, measure: MeasureSpec | None = None, trials: int = 100_000,
             seed: int = 0, fuel: int = 10_000, query: BoolExpr | None = None,
             shard_size: int = 1 << 16, threads: int = 1) -> SimulationResult:
    """Run ``p`` on ``trials`` independent inputs drawn from ``measure``
    (point 0 by default) and the sample streams.

    Trials are split into fixed-size shards, each seeded from
    ``(seed, shard index)``, so the result does not depend on ``threads``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if measure is None:
        measure = point_measure(p.n)
    if len(measure) != p.n:
        raise ValueError(f"measure has {len(measure)} components for {p.n} variables")
    body = _core(p)
    sizes = [min(shard_size, trials - start) for start in range(0, trials, shard_size)]
    seqs = [np.random.SeedSequence(seed, spawn_key=(i,)) for i in range(len(sizes))]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda a: _simulate_shard(body, measure, a[0], a[1], fuel),
                                  zip(sizes, seqs)))
    else:
        parts = [_simulate_shard(body, measure, n, s, fuel) for n, s in zip(sizes, seqs)]
    status = np.concatenate([s for s, _, _ in parts])
    final_vals = np.concatenate([v for _, v, _ in parts], axis=1)
    consumed = np.concatenate([c for _, _, c in parts], axis=1)
    counts = {name: int(np.count_nonzero(status == code)) for code, name in STATUS_NAMES.items()}
    result = SimulationResult(trials, counts, status, final_vals, consumed)
    if query is not None:
        result.query = query
        result.query_hits = result.hits(query)
    return result
