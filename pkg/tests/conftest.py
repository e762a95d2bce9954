"""Collects acceptance verdicts and prints one line per criterion at the end of the run."""

import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    def record(number, name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {name} ({detail})"
        _VERDICTS.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
