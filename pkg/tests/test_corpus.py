"""Regression over the example corpus against frozen counts and masses."""
import json
from fractions import Fraction

import pytest

from conftest import CORPUS, ROOT, needs_z3
from probsym import parse
from probsym.cli import RunConfig, build_report
from probsym.measure import NotDiscrete, enumerate_discrete_oracle

FROZEN = json.loads((ROOT / "tests" / "data" / "corpus_counts.json").read_text())
NAMES = sorted(FROZEN["programs"])
COUNTS = ("paths", "feasible", "infeasible_pc", "discarded", "unroll_exhausted", "samples")


def corpus_report(name):
    cfg = RunConfig(input=str(CORPUS / f"{name}.prob"), unroll=FROZEN["unroll"],
                    seed=FROZEN["seed"], mc_trials=FROZEN["mc_trials"])
    return build_report(cfg)


def compare(name, summary) -> list:
    """Mismatches between a summary and the frozen entry (empty when equal)."""
    want = FROZEN["programs"][name]
    bad = [f"{k}: {summary[k]} != {want[k]}" for k in COUNTS if summary[k] != want[k]]
    ev, fev = summary["evidence"], want["evidence"]
    if ev["method"] != fev["method"]:
        bad.append(f"method {ev['method']} != {fev['method']}")
    if fev["rational"] is not None:
        if ev["rational"] != fev["rational"]:
            bad.append(f"evidence {ev['rational']} != {fev['rational']}")
    elif abs(float(ev["value"]) - float(fev["value"])) > 1e-12:
        bad.append(f"evidence {ev['value']} != {fev['value']}")
    if abs(float(summary["truncation_bound"]["value"]) - float(want["truncation_bound"])) > 1e-12:
        bad.append("truncation bound")
    return bad


def test_every_corpus_file_is_frozen():
    assert sorted(p.stem for p in CORPUS.glob("*.prob")) == NAMES


@needs_z3
@pytest.mark.parametrize("name", NAMES)
def test_corpus_regression(name):
    assert compare(name, corpus_report(name)["summary"]) == []


@pytest.mark.parametrize("name", NAMES)
def test_discrete_corpus_matches_oracle(name):
    p = parse((CORPUS / f"{name}.prob").read_text())
    try:
        oracle = enumerate_discrete_oracle(p)
    except NotDiscrete:
        pytest.skip("not a loop-free Bernoulli program")
    want = FROZEN["programs"][name]["evidence"]
    assert float(want["value"]) == pytest.approx(oracle.mass(), abs=1e-12)
    if want["rational"] is not None:
        assert float(Fraction(want["rational"])) == pytest.approx(oracle.mass(), abs=1e-12)
