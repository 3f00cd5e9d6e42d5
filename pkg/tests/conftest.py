"""Shared test plumbing: collects acceptance pass/fail lines for the summary."""

import pytest

_ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Record one acceptance line and assert it passed."""

    def _record(number, ok, text):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {text}"
        _ACCEPTANCE_LINES.append(line)
        assert ok, line

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
