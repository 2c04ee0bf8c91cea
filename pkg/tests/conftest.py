import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from aecct.codes import ParityCheck, bundled_code

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# path graph v0 - c0 - v1 - c1 - v2
TOY_H = np.array([[1, 1, 0], [0, 1, 1]], dtype=np.uint8)


@pytest.fixture
def toy_code():
    return ParityCheck(TOY_H, name="toy")


@pytest.fixture(scope="session")
def hamming():
    return bundled_code("hamming_7_4")


@pytest.fixture(scope="session")
def bch31():
    return bundled_code("bch_31_16")


def repetition3():
    return ParityCheck(np.array([[1, 1, 0], [1, 0, 1]]), name="rep3")


def single_parity4():
    return ParityCheck(np.array([[1, 1, 1, 1]]), name="spc4")


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def record_acceptance(number, title: str, checks: list, label: str | None = None):
    """Store and print a pass/fail line; ``checks`` holds (name, ok, detail) triples.

    ``number`` orders the lines; ``label`` replaces the default "criterion N" prefix.
    """
    ok = all(c[1] for c in checks)
    failed = [f"{name} ({detail})" for name, good, detail in checks if not good]
    line = (f"{label or f'criterion {number}'} {'PASS' if ok else 'FAIL'}: {title}"
            + (f" | failing: {'; '.join(failed)}" if failed else f" | {len(checks)} checks"))
    if not failed and len(checks) <= 8:
        line += "".join(f"; {name}: {detail}" for name, _, detail in checks)
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok, failed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
