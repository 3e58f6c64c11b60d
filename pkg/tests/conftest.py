import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

_GATE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def gate():
    """``gate(n, title, passed, detail)`` records one acceptance line and asserts ``passed``."""

    def record(number, title, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        _GATE_LINES.append(f"[{status}] criterion {number:>2}: {title} :: {detail}")
        assert passed, f"criterion {number} ({title}) failed: {detail}"

    record.skip = lambda number, title, reason: (
        _GATE_LINES.append(f"[SKIP] criterion {number:>2}: {title} :: {reason}"), pytest.skip(reason))
    record.info = lambda number, title, detail: _GATE_LINES.append(
        f"[INFO] criterion {number:>2}: {title} :: {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if _GATE_LINES:
        terminalreporter.section("acceptance gate")
        for line in sorted(_GATE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
