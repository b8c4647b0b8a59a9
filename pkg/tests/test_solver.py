from fractions import Fraction

import pytest

from conftest import needs_z3
from probsym.concrete import Point, Uniform01
from probsym.interp import eval_sym_bool, y, z
from probsym.solver import (Sat, Solver, Unknown, Unsat, emit_smt,
                            ground_false, parse_model)
from probsym.symexec import Configuration, Feasibility, PathOutcome, Status, explore
from probsym.syntax import BTrue, Cmp, Const, Not, Op, Var

HEIGHT = Op("+", (Op("*", (z(0), Op("sqrt", (Const(72),)))), Const(175)))
CFG1_PC = (Cmp("<", y(0), Const(Fraction(51, 100))), Cmp("=", Const(1), Const(1)))
CFG2_PC = (Cmp("<", y(0), Const(Fraction(51, 100))), Cmp("!=", Const(1), Const(1)))


def outcome(pc, po=()):
    return PathOutcome(Configuration((), 1, 1, tuple(pc), tuple(po)), Status.FINAL, "")


def test_emit_basic():
    text = emit_smt(CFG1_PC)
    assert "(set-logic QF_NRA)" in text
    assert "(declare-const u0 Real)" in text
    assert "(assert (and (<= 0 u0) (<= u0 1)))" in text
    assert "(assert (< u0 (/ 51 100)))" in text
    assert "(assert (= 1 1))" in text
    assert text.rstrip().endswith("(get-model)")


def test_emit_sqrt_becomes_auxiliary():
    text = emit_smt([Cmp(">=", HEIGHT, Const(200))])
    assert "(declare-const g0 Real)" in text and "(declare-const s0 Real)" in text
    assert "(assert (= (* s0 s0) 72))" in text
    assert "(assert (>= s0 0))" in text
    assert "(assert (>= (+ (* g0 s0) 175) 200))" in text
    assert "sqrt" not in text


def test_emit_true_adds_nothing_and_negatives():
    text = emit_smt([BTrue(), Cmp("<", Var(0), Const(Fraction(-3, 2)))], get_model=False)
    assert "(assert true)" not in text and "get-model" not in text
    assert "(assert (< x0 (- (/ 3 2))))" in text


def test_emit_measure_pins_variables():
    text = emit_smt([Cmp("<", Var(0), Var(1))], (Point(2.5), Uniform01()))
    assert "(assert (= x0 (/ 5 2)))" in text
    assert "(assert (and (<= 0 x1) (<= x1 1)))" in text


def test_parse_model():
    text = """(
      (define-fun u0 () Real (/ 1.0 4.0))
      (define-fun g1 () Real (- 3.0))
      (define-fun s0 () Real (root-obj (+ (^ x 2) (- 72)) 2))
      (define-fun x2 () Real 7.0)
    )"""
    assert parse_model(text) == {"u0": Fraction(1, 4), "g1": Fraction(-3), "x2": Fraction(7)}


def test_sat_valuation():
    rho = Sat({"u1": Fraction(1, 4), "x0": Fraction(2)}).valuation(2)
    assert rho.vars == (2.0, 0.0)
    assert rho.uni(2) == [0.5, 0.25]


def test_ground_false():
    assert ground_false(CFG2_PC)
    assert not ground_false(CFG1_PC)
    assert ground_false([Not(Cmp("=", Op("*", (Const(2), Const(3))), Const(6)))])
    # sqrt is never folded
    assert not ground_false([Cmp("=", Op("sqrt", (Const(2),)), Const(1))])


@needs_z3
def test_check_verdicts(solver):
    assert isinstance(solver.check(CFG2_PC), Unsat)
    assert isinstance(solver.check([BTrue()]), Sat)
    v = solver.check([Cmp(">=", HEIGHT, Const(200))])
    assert isinstance(v, Sat)
    v = solver.check(CFG1_PC)
    assert isinstance(v, Sat)
    # the model is a witness
    assert all(eval_sym_bool(c, v.valuation()) for c in CFG1_PC)


@needs_z3
def test_uniform_bounds(solver):
    assert isinstance(solver.check([Cmp(">", y(0), Const(1))]), Unsat)
    assert isinstance(solver.check([Cmp(">", z(0), Const(1000))]), Sat)


@needs_z3
def test_classify(solver, gender_height):
    got = [solver.classify(o).feasibility for o in explore(gender_height)]
    assert got == [Feasibility.FEASIBLE, Feasibility.INFEASIBLE_PC,
                   Feasibility.INFEASIBLE_PC, Feasibility.FEASIBLE]
    d = solver.classify(outcome([BTrue()], [Cmp("=", Const(1), Const(0))]))
    assert d.feasibility is Feasibility.DISCARDED
    d = solver.classify(outcome([BTrue()], [Cmp("<", y(0), Const(0))]))
    assert d.feasibility is Feasibility.DISCARDED
    assert not d.solver_unknown


@needs_z3
def test_classify_all_threads(solver, gender_height):
    out = explore(gender_height)
    assert solver.classify_all(out, threads=3) == solver.classify_all(out)


def test_missing_solver_is_unknown():
    s = Solver("no-such-solver-binary-xyz")
    assert not s.available
    o = s.classify(outcome(CFG1_PC))
    assert o.feasibility is Feasibility.FEASIBLE and o.solver_unknown
    # ground folding still prunes without a solver
    assert s.classify(outcome(CFG2_PC)).feasibility is Feasibility.INFEASIBLE_PC


def test_timeout_is_unknown(tmp_path):
    slow = tmp_path / "slow.sh"
    slow.write_text("#!/bin/sh\nsleep 5\n")
    slow.chmod(0o755)
    s = Solver(str(slow), timeout_ms=100)
    v = s.check(CFG1_PC)
    assert isinstance(v, Unknown) and v.reason == "timeout"
    o = s.classify(outcome(CFG1_PC))
    assert o.feasibility is Feasibility.FEASIBLE and o.solver_unknown


def test_garbage_output_is_unknown(tmp_path):
    bad = tmp_path / "bad.sh"
    bad.write_text("#!/bin/sh\ncat > /dev/null\necho what\n")
    bad.chmod(0o755)
    assert isinstance(Solver(str(bad)).check(CFG1_PC), Unknown)
