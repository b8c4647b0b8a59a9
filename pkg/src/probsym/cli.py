"""Command-line driver: parse, explore, classify and quantify a program.

    probsym run model.prob --query "gender = 1" --format json
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from typing import Sequence

from . import __version__
from .concrete import build_measure
from .measure import (MassEstimate, ZeroEvidence, path_mass, posterior,
                      theorem2_sum)
from .solver import Solver
from .symexec import BudgetError, Feasibility, Status, explore
from .syntax import ParseError, Program, desugar, parse, parse_bool

log = logging.getLogger("probsym")

SCHEMA_VERSION = 1


@dataclass
class RunConfig:
    input: str
    unroll: int = 4
    mc_trials: int = 100_000
    seed: int = 0
    solver_cmd: str | None = None
    use_solver: bool = True
    timeout_ms: int = 10_000
    query: str | None = None
    measure: Sequence[str] = field(default_factory=list)
    format: str = "table"
    threads: int = 1
    max_paths: int = 100_000

    def __post_init__(self):
        if self.unroll < 0:
            raise ValueError("--unroll must be non-negative")
        if self.mc_trials < 1:
            raise ValueError("--mc-trials must be at least 1")


def _num(x: float) -> str:
    return format(x, ".17g")


def _mass(m: MassEstimate | None) -> dict | None:
    if m is None:
        return None
    return {"value": _num(m.value), "method": m.method, "stderr": _num(m.stderr),
            "samples": m.samples_used,
            "rational": None if m.rational is None else str(m.rational)}


def _category(o) -> str:
    if o.feasibility is Feasibility.INFEASIBLE_PC:
        return "infeasible_pc"
    if o.status is Status.UNROLL_EXHAUSTED:
        return "unroll_exhausted"
    if o.feasibility is Feasibility.DISCARDED:
        return "discarded"
    return "feasible"


def build_report(config: RunConfig, program: Program | None = None) -> dict:
    """Run the whole pipeline and return the JSON-ready report."""
    started = time.perf_counter()
    if program is None:
        with open(config.input, encoding="utf-8") as fh:
            program = parse(fh.read())
    core = desugar(program)
    measure = build_measure(program.vars, config.measure)
    query = parse_bool(config.query, program.vars) if config.query else None

    outcomes = explore(core, config.unroll, config.max_paths)
    solver = Solver(config.solver_cmd, config.timeout_ms)
    warnings = []
    if config.use_solver:
        if not solver.available:
            warnings.append(f"solver {solver.cmd!r} not available; only constant conjuncts are pruned")
            log.warning(warnings[-1])
        # without a solver this still folds constant conjuncts
        outcomes = solver.classify_all(outcomes, measure, config.threads)

    kw = dict(measure=measure, unroll=config.unroll, max_paths=config.max_paths,
              mc_trials=config.mc_trials, seed=config.seed, outcomes=outcomes)
    evidence = theorem2_sum(core, **kw)
    by_choice = {r.choices: r for r in evidence.paths}
    queried = theorem2_sum(core, query=query, **kw) if query is not None else None
    query_by_choice = {r.choices: r for r in queried.paths} if queried else {}

    paths = []
    counts = {"feasible": 0, "infeasible_pc": 0, "discarded": 0, "unroll_exhausted": 0}
    for i, o in enumerate(outcomes):
        counts[_category(o)] += 1
        rep = by_choice.get(o.choices)
        if rep is None:
            prior = path_mass(o.cfg.pc, measure, config.mc_trials, config.seed + i)
            joint = path_mass(o.cfg.pc + o.cfg.po, measure, config.mc_trials, config.seed + i)
        else:
            prior, joint = rep.prior, rep.joint
        qrep = query_by_choice.get(o.choices)
        record = {"choices": o.choices, "status": o.status.value}
        record.update(o.cfg.describe(program.vars))
        record.update({
            "feasibility": o.feasibility.value,
            "solver_unknown": o.solver_unknown,
            "prior": _mass(prior),
            "joint": _mass(joint),
            "query": _mass(qrep.query) if qrep else None,
        })
        paths.append(record)

    post = None
    if query is not None:
        try:
            pr = posterior(core, query=query, **kw)
            exact = pr.numerator.rational is not None and pr.evidence.rational is not None
            post = {"value": _num(pr.value), "method": pr.method, "stderr": _num(pr.stderr),
                    "rational": str(pr.numerator.rational / pr.evidence.rational) if exact else None}
        except ZeroEvidence as exc:
            warnings.append(f"posterior undefined, evidence is 0: {exc}")
    summary = {
        "paths": len(outcomes),
        **counts,
        "samples": max((o.cfg.samples for o in outcomes), default=0),
        "evidence": _mass(evidence.total),
        "query_mass": _mass(queried.total) if queried else None,
        "posterior": post,
        "truncation_bound": _mass(evidence.truncation),
        "elapsed_s": round(time.perf_counter() - started, 6),
    }
    return {
        "schema": SCHEMA_VERSION,
        "program": config.input,
        "variables": list(program.vars),
        "config": {"unroll": config.unroll, "mc_trials": config.mc_trials, "seed": config.seed,
                   "query": config.query, "measure": list(config.measure)},
        "paths": paths,
        "summary": summary,
        "warnings": warnings,
    }


def _short(m: dict | None) -> str:
    if m is None:
        return "-"
    v = float(m["value"])
    if m["method"] == "exact":
        return f"{v:.6g}"
    return f"{v:.6g}±{float(m['stderr']):.2g}"


def render_table(report: dict) -> str:
    lines = []
    for n, p in enumerate(report["paths"], 1):
        lines.append(f"path {n} [{p['choices'] or '-'}] {p['status']}, {p['feasibility']}"
                     + (" (solver unknown)" if p["solver_unknown"] else ""))
        lines.append(f"  σ  = {p['subst']}")
        lines.append(f"  k_y = {p['k_y']}, k_z = {p['k_z']}")
        lines.append(f"  pc = {p['pc']}")
        lines.append(f"  po = {p['po']}")
        mass = f"  prior = {_short(p['prior'])}, joint = {_short(p['joint'])}"
        if p["query"] is not None:
            mass += f", query = {_short(p['query'])}"
        lines.append(mass)
    s = report["summary"]
    lines.append("")
    # "Actual" is the feasible count; infeasible-pc paths get their own column
    header = ["Paths", "Actual", "Discarded", "Infeasible-pc", "Unroll-cut", "Samples", "Time (s)"]
    row = [s["paths"], s["feasible"], s["discarded"], s["infeasible_pc"],
           s["unroll_exhausted"], s["samples"], f"{s['elapsed_s']:.2f}"]
    widths = [max(len(h), len(str(v))) for h, v in zip(header, row)]
    lines.append("  ".join(h.rjust(w) for h, w in zip(header, widths)))
    lines.append("  ".join(str(v).rjust(w) for v, w in zip(row, widths)))
    lines.append("")
    lines.append(f"evidence (mass passing all observations): {_short(s['evidence'])}")
    if s["query_mass"] is not None:
        lines.append(f"query mass: {_short(s['query_mass'])}")
        lines.append(f"posterior:  {_short(s['posterior'])}")
    if s["unroll_exhausted"]:
        lines.append(f"mass cut off by the unroll budget: at most {_short(s['truncation_bound'])}")
    for w in report["warnings"]:
        lines.append(f"warning: {w}")
    return "\n".join(lines) + "\n"


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="probsym", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="symbolically execute a program and report its paths")
    run.add_argument("file")
    run.add_argument("--unroll", type=int, default=4, help="times each loop body may be entered along one path (default 4)")
    run.add_argument("--mc-trials", type=int, default=100_000, help="Monte Carlo trials per non-separable path")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--solver-cmd", default=None,
                     help="SMT-LIB2 solver reading stdin (default: $PROBSYM_SOLVER or 'z3 -in')")
    run.add_argument("--no-solver", action="store_true", help="skip feasibility checking")
    run.add_argument("--timeout-ms", type=int, default=10_000)
    run.add_argument("--query", default=None, help="Boolean expression over program variables")
    run.add_argument("--measure", nargs="*", default=[], metavar="VAR=SPEC",
                     help="input measure per variable: point:V, uniform01 or stdnormal")
    run.add_argument("--format", choices=("table", "json"), default="table")
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--max-paths", type=int, default=100_000)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        config = RunConfig(args.file, args.unroll, args.mc_trials, args.seed, args.solver_cmd,
                           not args.no_solver, args.timeout_ms, args.query, args.measure,
                           args.format, max(1, args.threads), args.max_paths)
        report = build_report(config)
    except (ParseError, ValueError, OSError) as exc:
        print(f"probsym: error: {exc}", file=sys.stderr)
        return 1
    except BudgetError as exc:
        print(f"probsym: budget exceeded: {exc}", file=sys.stderr)
        return 2
    if config.format == "json":
        sys.stdout.write(json.dumps(report, indent=2, ensure_ascii=False) + "\n")
    else:
        sys.stdout.write(render_table(report))
    return 0


if __name__ == "__main__":
    sys.exit(main())
