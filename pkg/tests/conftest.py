import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from casp_fixture import write_casp_like  # noqa: E402

DATA = Path(__file__).parent / "data"
CASP_FULL_ROWS = 45_730


@pytest.fixture(scope="session")
def casp_sample():
    return DATA / "casp_sample.csv"


@pytest.fixture(scope="session")
def casp_full(tmp_path_factory):
    """Full-size file with the same row count as the real dataset."""
    return write_casp_like(tmp_path_factory.mktemp("casp") / "CASP.csv", CASP_FULL_ROWS)


_ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one pass/fail line per acceptance criterion; lines are echoed in the summary."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[number])
