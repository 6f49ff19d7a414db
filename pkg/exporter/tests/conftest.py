import pytest

ACCEPTANCE_LINES: list[str] = []


def _record(name: str, ok: bool, detail: str) -> None:
    line = f"{name}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)


@pytest.fixture
def record_secondary():
    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("exporter acceptance")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
