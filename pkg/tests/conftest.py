import shutil
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(Path(__file__).resolve().parent))

from probsym import parse  # noqa: E402
from probsym.solver import Solver  # noqa: E402

CORPUS = ROOT / "corpus"

GENDER_HEIGHT = """
gender ~ bern(0.51);
if (gender = 1) {
  height ~ norm(175, 72);
} else {
  height ~ norm(161, 50);
}
observe (height >= 200);
"""


@pytest.fixture
def gender_height():
    return parse(GENDER_HEIGHT)


@pytest.fixture(scope="session")
def solver():
    s = Solver()
    if not s.available:
        pytest.skip("no SMT solver on PATH")
    return s


needs_z3 = pytest.mark.skipif(shutil.which("z3") is None, reason="z3 binary not installed")


# --- acceptance summary --------------------------------------------------------

_ACCEPTANCE: dict = {}


def record_acceptance(n: int, ok: bool, detail: str) -> None:
    _ACCEPTANCE[n] = (ok, detail)
    print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
