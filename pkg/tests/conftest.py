"""Shared pytest plumbing: acceptance criteria report one line each in the terminal summary."""

import pytest

_CRITERIA: dict[int, tuple[bool, str, str]] = {}


@pytest.fixture(scope="session")
def criterion_log():
    """Record ``(number, passed, title, detail)``; lines are printed at the end of the run."""

    def record(number: int, passed: bool, title: str, detail: str) -> None:
        _CRITERIA[number] = (bool(passed), title, detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, title, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
