import math
from fractions import Fraction

import mpmath
import pytest

import properties as props
from probsym.concrete import Point, StdNormal, Uniform01, simulate
from probsym.interp import y, z
from probsym.measure import (EXACT, MONTE_CARLO, MassEstimate, NotDiscrete,
                             NotSeparable, ZeroEvidence,
                             enumerate_discrete_oracle, exact_separable_mass,
                             mc_mass, normal_cdf, normal_mass, normal_sf,
                             path_mass, posterior, sum_masses, theorem2_sum)
from probsym.symexec import explore
from probsym.syntax import (BFalse, BTrue, Cmp, Const, Observe, Op, Program,
                            parse, parse_bool)

R = Fraction
HEIGHT = Op("+", (Op("*", (z(0), Op("sqrt", (Const(72),)))), Const(175)))


def test_prior_of_first_path_is_exact():
    pc = (Cmp("<", y(0), Const(R(51, 100))), Cmp("=", Const(1), Const(1)))
    m = exact_separable_mass(pc, ())
    assert m.method == EXACT and m.rational == R(51, 100) and m.value == 0.51


def test_true_has_mass_one():
    assert exact_separable_mass([BTrue()], ()).rational == 1
    assert exact_separable_mass([], ()).rational == 1
    assert exact_separable_mass([BFalse()], ()).rational == 0


def test_normal_tail_against_mpmath():
    m = exact_separable_mass([Cmp(">=", HEIGHT, Const(200))], ())
    mpmath.mp.dps = 40
    want = mpmath.ncdf(-mpmath.mpf(25) / mpmath.sqrt(72))
    assert abs(m.value - float(want)) <= 1e-15
    assert m.value == pytest.approx(1.6081e-3, rel=1e-4)


@pytest.mark.parametrize("x", [-40.0, -8.5, -1.0, 0.0, 0.3, 2.0, 9.0, 38.0])
def test_normal_cdf(x):
    mpmath.mp.dps = 40
    assert abs(normal_cdf(x) - float(mpmath.ncdf(x))) <= 1e-16 + 1e-14 * float(mpmath.ncdf(x))
    assert abs(normal_sf(x) - float(mpmath.ncdf(-x))) <= 1e-16 + 1e-14 * float(mpmath.ncdf(-x))


def test_normal_mass_interval():
    assert normal_mass(-math.inf, math.inf) == 1.0
    assert normal_mass(1.0, 0.0) == 0.0
    assert normal_mass(-1.0, 1.0) == pytest.approx(0.6826894921370859, abs=1e-15)


def test_uniform_intervals_and_variables():
    c = [Cmp(">", y(0), Const(R(1, 4))), Cmp("<=", y(0), Const(R(3, 4))), Cmp("<", y(1), Const(2))]
    assert exact_separable_mass(c, ()).rational == R(1, 2)
    # a program variable that is random under the input measure
    x = parse_bool("x < 0.2", ["x"])
    assert exact_separable_mass([x], (Uniform01(),)).rational == R(1, 5)
    assert exact_separable_mass([x], (Point(0.1),)).rational == 1
    assert exact_separable_mass([x], (StdNormal(),)).value == pytest.approx(normal_cdf(0.2))


def test_non_separable():
    with pytest.raises(NotSeparable):
        exact_separable_mass([Cmp("<", y(0), y(1))], ())
    with pytest.raises(NotSeparable):
        exact_separable_mass([Cmp("<", Op("*", (y(0), y(0))), Const(R(1, 4)))], ())


def test_mc_examples():
    cases = [
        ([Cmp("<", y(0), y(1))], 0.5),
        ([Cmp("<", Op("*", (y(0), y(0))), Const(R(1, 4)))], 0.5),
        ([Cmp("<", Op("+", (z(0), z(1))), Const(0))], 0.5),
        ([Cmp("<", Op("*", (z(0), z(0))), Const(1))], 0.6826894921370859),
    ]
    for constraints, want in cases:
        m = mc_mass(constraints, (), trials=200_000, seed=1)
        assert m.method == MONTE_CARLO and m.samples_used == 200_000
        assert abs(m.value - want) <= 3 * m.stderr


def test_mc_is_deterministic():
    c = [Cmp("<", y(0), y(1))]
    assert mc_mass(c, (), 10_000, seed=4) == mc_mass(c, (), 10_000, seed=4)


def test_path_mass_dispatch():
    assert path_mass([Cmp("<", y(0), Const(R(1, 2)))], ()).exact
    assert not path_mass([Cmp("<", y(0), y(1))], (), trials=1000).exact


def test_mass_estimate_validation():
    with pytest.raises(ValueError):
        MassEstimate(1.5)
    with pytest.raises(ValueError):
        MassEstimate(0.5, EXACT, stderr=0.1)


def test_sum_masses():
    s = sum_masses([MassEstimate(0.25, rational=R(1, 4)), MassEstimate(0.5, rational=R(1, 2))])
    assert s.rational == R(3, 4)
    s = sum_masses([MassEstimate(0.25, MONTE_CARLO, 0.03, 10), MassEstimate(0.5, MONTE_CARLO, 0.04, 10)])
    assert s.stderr == pytest.approx(0.05) and s.samples_used == 20


def test_path_sum_gender_height(gender_height):
    r = theorem2_sum(gender_height)
    want = 0.51 * normal_sf(25 / math.sqrt(72)) + 0.49 * normal_sf(39 / math.sqrt(50))
    assert r.total.exact and r.total.value == pytest.approx(want, rel=1e-12)
    assert [p.prior.rational for p in r.paths] == [R(51, 100), 0, 0, R(49, 100)]
    assert r.truncation.value == 0.0


def test_posterior_is_bayes_quotient(gender_height):
    q = parse_bool("gender = 1", gender_height.vars)
    post = posterior(gender_height, query=q)
    a = 0.51 * normal_sf(25 / math.sqrt(72))
    b = 0.49 * normal_sf(39 / math.sqrt(50))
    assert post.method == EXACT
    assert post.value == pytest.approx(a / (a + b), rel=1e-12)


def test_zero_evidence():
    with pytest.raises(ZeroEvidence):
        posterior(Program((), Observe(BFalse())))


def test_oracle_bern():
    d = enumerate_discrete_oracle(parse("c ~ bern(0.51)"))
    assert d.terminal == {(1.0,): 0.51, (0.0,): 0.49}
    assert d.aborted == 0.0


def test_oracle_at_least_one_heads():
    p = parse("a ~ bern(0.5); b ~ bern(0.5); observe (a = 1 || b = 1)")
    d = enumerate_discrete_oracle(p)
    assert set(d.terminal) == {(1.0, 1.0), (1.0, 0.0), (0.0, 1.0)}
    assert d.aborted == 0.25
    q = parse_bool("a = 1", p.vars)
    assert d.mass(q) / d.mass() == pytest.approx(2 / 3)
    post = posterior(p, query=q)
    assert post.method == EXACT and Fraction(post.value).limit_denominator(100) == R(2, 3)


def test_oracle_degenerate_bias():
    d = enumerate_discrete_oracle(parse("c ~ bern(0)"))
    assert d.terminal == {(0.0,): 1.0}


def test_oracle_rejects():
    with pytest.raises(NotDiscrete):
        enumerate_discrete_oracle(parse("c ~ rnd"))
    with pytest.raises(NotDiscrete):
        enumerate_discrete_oracle(parse("c ~ bern(c)"))
    with pytest.raises(NotDiscrete):
        enumerate_discrete_oracle(parse("while (c < 1) { c := 1 }"))


def test_truncation_bound():
    # a geometric loop: the cut mass bounds what the bounded sum misses
    p = parse("c := 1; n := 0; while (c = 1) { c ~ bern(0.5); n := n + 1 }")
    r = theorem2_sum(p, unroll=3)
    assert r.total.rational + r.truncation.rational == 1
    assert r.truncation.rational == R(1, 8)


def test_matches_simulation_mixed():
    p = parse("a ~ rnd; h ~ norm(0, 4); if (a < 0.3) { h := h + 1 }; observe (h > 0.5)")
    q = parse_bool("a < 0.3", p.vars)
    num = theorem2_sum(p, query=q).total.value
    sim = simulate(p, trials=400_000, seed=2, query=q)
    f = sim.frequency(q)
    assert abs(f - num) <= 4 * math.sqrt(num * (1 - num) / 400_000)


def test_discrete_sum_small():
    rep = props.check_discrete_sum(40, queries=3, seed=9)
    assert rep.ok, rep.failures
    assert rep.worst <= 1e-12


def test_conservation_small():
    rep = props.check_conservation(40, seed=10)
    assert rep.ok, rep.failures


def test_explore_then_sum_reuses_outcomes(gender_height):
    out = explore(gender_height)
    assert theorem2_sum(gender_height, outcomes=out).total == theorem2_sum(gender_height).total
