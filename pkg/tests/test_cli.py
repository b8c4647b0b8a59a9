import json
import subprocess
import sys
from fractions import Fraction
from pathlib import Path

import jsonschema
import pytest

from conftest import CORPUS, GENDER_HEIGHT, ROOT, needs_z3
from probsym.cli import RunConfig, build_report, main, render_table

SCHEMA = json.loads((ROOT / "docs" / "report.schema.json").read_text())


@pytest.fixture
def gh_file(tmp_path):
    f = tmp_path / "gh.prob"
    f.write_text(GENDER_HEIGHT)
    return f


def run_json(capsys, *argv):
    code = main(["run", *map(str, argv), "--format", "json"])
    out = capsys.readouterr().out
    return code, json.loads(out) if code == 0 else out


def strip_time(report):
    report = json.loads(json.dumps(report))
    report["summary"].pop("elapsed_s")
    return report


@needs_z3
def test_gender_height_json(capsys, gh_file):
    code, rep = run_json(capsys, gh_file, "--query", "gender = 1")
    assert code == 0
    jsonschema.validate(rep, SCHEMA)
    s = rep["summary"]
    assert (s["paths"], s["feasible"], s["infeasible_pc"], s["discarded"], s["samples"]) == (4, 2, 2, 0, 2)
    assert [p["feasibility"] for p in rep["paths"]] == ["feasible", "infeasible-pc", "infeasible-pc", "feasible"]
    assert rep["paths"][0]["prior"]["rational"] == "51/100"
    assert rep["paths"][0]["pc"] == "y0 < 0.51 ∧ 1 = 1"
    assert float(s["posterior"]["value"]) == pytest.approx(0.99999, abs=1e-5)
    assert rep["warnings"] == []


@needs_z3
def test_gender_height_table(capsys, gh_file):
    assert main(["run", str(gh_file)]) == 0
    out = capsys.readouterr().out
    assert "σ  = {gender ↦ 1, height ↦ z0 * sqrt(72) + 175}" in out
    header = next(line for line in out.splitlines() if line.startswith("Paths"))
    assert header.split() == ["Paths", "Actual", "Discarded", "Infeasible-pc", "Unroll-cut", "Samples", "Time", "(s)"]
    assert "prior = 0.51" in out


def test_skip(tmp_path, capsys):
    f = tmp_path / "skip.prob"
    f.write_text("skip")
    code, rep = run_json(capsys, f)
    assert code == 0
    assert rep["summary"]["paths"] == 1
    assert rep["paths"][0]["prior"]["rational"] == "1"
    assert rep["summary"]["evidence"]["rational"] == "1"


@needs_z3
def test_twocoins(capsys):
    code, rep = run_json(capsys, CORPUS / "twocoins.prob", "--query", "a = 1")
    assert code == 0
    s = rep["summary"]
    assert (s["paths"], s["feasible"], s["discarded"]) == (4, 3, 1)
    assert s["evidence"]["rational"] == "3/4"
    assert s["posterior"]["rational"] == "1/3"


def test_parse_error_exit_code(tmp_path, capsys):
    f = tmp_path / "bad.prob"
    f.write_text("x := 1 +")
    assert main(["run", str(f)]) == 1
    err = capsys.readouterr().err
    assert "1:9" in err or "line 1" in err


def test_missing_file_exit_code(tmp_path):
    assert main(["run", str(tmp_path / "nope.prob")]) == 1


def test_bad_query_exit_code(gh_file):
    assert main(["run", str(gh_file), "--query", "weight = 1"]) == 1


def test_budget_exit_code(tmp_path):
    f = tmp_path / "loop.prob"
    f.write_text("while (x < 100) { b ~ bern(0.5); x := x + 1 }")
    assert main(["run", str(f), "--unroll", "20", "--max-paths", "50"]) == 2


def test_negative_unroll_rejected(gh_file):
    with pytest.raises(ValueError):
        RunConfig(input=str(gh_file), unroll=-1)


def test_missing_solver_warns(capsys, gh_file):
    code, rep = run_json(capsys, gh_file, "--solver-cmd", "no-such-solver-binary-xyz")
    assert code == 0
    assert any("solver" in w for w in rep["warnings"])
    # ground folding still finds the two dead branches
    assert rep["summary"]["infeasible_pc"] == 2
    jsonschema.validate(rep, SCHEMA)


def test_no_solver_flag(capsys, gh_file):
    code, rep = run_json(capsys, gh_file, "--no-solver")
    assert code == 0
    assert float(rep["summary"]["evidence"]["value"]) == pytest.approx(8.2014699818e-4, rel=1e-9)


def test_deterministic_modulo_time(gh_file):
    cfg = RunConfig(input=str(gh_file), use_solver=False)
    assert strip_time(build_report(cfg)) == strip_time(build_report(cfg))


def test_threads_do_not_change_results(tmp_path):
    f = CORPUS / "noisy_measurement.prob"
    a = build_report(RunConfig(input=str(f), use_solver=False, threads=1))
    b = build_report(RunConfig(input=str(f), use_solver=False, threads=4))
    assert strip_time(a)["paths"] == strip_time(b)["paths"]
    assert strip_time(a)["summary"] == strip_time(b)["summary"]


def test_measure_option(tmp_path, capsys):
    f = tmp_path / "m.prob"
    f.write_text("observe (x < 0.25)")
    code, rep = run_json(capsys, f, "--measure", "x=uniform01", "--no-solver")
    assert code == 0
    assert rep["summary"]["evidence"]["rational"] == "1/4"
    code, rep = run_json(capsys, f, "--measure", "x=point:0.5", "--no-solver")
    assert rep["summary"]["evidence"]["rational"] == "0"


def test_zero_evidence_warns(tmp_path, capsys):
    f = tmp_path / "z.prob"
    f.write_text("x ~ rnd; observe (x > 2)")
    code, rep = run_json(capsys, f, "--query", "x > 0", "--no-solver")
    assert code == 0
    assert rep["summary"]["posterior"] is None
    assert any("evidence" in w for w in rep["warnings"])


@needs_z3
def test_unroll_cut_counted(tmp_path, capsys):
    f = tmp_path / "geo.prob"
    f.write_text("c := 1; while (c = 1) { c ~ bern(0.5) }")
    code, rep = run_json(capsys, f, "--unroll", "3")
    s = rep["summary"]
    assert s["unroll_exhausted"] == 1
    # unchecked, every cut path counts, including dead ones
    code, raw = run_json(capsys, f, "--unroll", "3", "--no-solver")
    assert raw["summary"]["unroll_exhausted"] > 1
    assert raw["summary"]["truncation_bound"] == s["truncation_bound"]
    assert Fraction(s["truncation_bound"]["rational"]) == Fraction(1, 8)


def test_render_table_of_report(gh_file):
    text = render_table(build_report(RunConfig(input=str(gh_file), use_solver=False)))
    assert text.count("path ") == 4


def test_module_entry_point(gh_file):
    proc = subprocess.run([sys.executable, "-m", "probsym", "run", str(gh_file), "--no-solver",
                           "--format", "json"], capture_output=True, text=True, cwd=Path(ROOT))
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["summary"]["paths"] == 4


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
    assert "0.1.0" in capsys.readouterr().out


@needs_z3
@pytest.mark.parametrize("name", sorted(p.name for p in CORPUS.glob("*.prob")))
def test_corpus_reports_validate(name, capsys):
    code, rep = run_json(capsys, CORPUS / name)
    assert code == 0
    jsonschema.validate(rep, SCHEMA)
