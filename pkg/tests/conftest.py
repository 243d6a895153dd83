import pathlib

import pytest

from gsclab.geometry import full_cube, menger_sponge, standard_carpet

ROOT = pathlib.Path(__file__).resolve().parents[1]
PATTERNS = ROOT / "patterns"


@pytest.fixture(scope="session")
def sc():
    return standard_carpet()


@pytest.fixture(scope="session")
def square():
    return full_cube(2, 3)


@pytest.fixture(scope="session")
def menger():
    return menger_sponge()


@pytest.fixture(scope="session")
def pattern_dir():
    return PATTERNS


# one verdict line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def verdict():
    def record(number: int, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {detail}"
        ACCEPTANCE[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
