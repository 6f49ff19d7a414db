"""Shared pytest hooks for the suite.

The acceptance tests register one summary line per checked criterion; the
terminal-summary hook prints them after the run so the verdicts are visible
regardless of output capture.
"""

import pytest

ACCEPTANCE_LINES: list[str] = []


def _record(index: int, ok: bool, detail: str) -> None:
    line = f"criterion {index}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)


@pytest.fixture
def record_criterion():
    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
