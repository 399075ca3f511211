"""Collects one status line per acceptance criterion and prints them after the run."""

import pytest

RESULTS: dict[int, str] = {}


@pytest.fixture
def record():
    def _record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n} [{'PASS' if ok else 'FAIL'}] {detail}"
        RESULTS[n] = line
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
