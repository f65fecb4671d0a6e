import numpy as np
import pytest

ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def record_criterion():
    """Record a criterion verdict for the end-of-run acceptance summary."""
    def record(number, passed, detail, part=""):
        verdict = "N/A" if passed is None else ("PASS" if passed else "FAIL")
        label = f"{number} [{part}]" if part else f"{number}"
        line = f"criterion {label}: {verdict} ({detail})"
        ACCEPTANCE_LINES[(number, part)] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
