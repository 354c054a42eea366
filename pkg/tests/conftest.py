import pytest

_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line; printed in the terminal summary."""

    def _add(criterion: int, passed: bool, detail: str) -> bool:
        _LINES.append((criterion, f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}"))
        return passed

    return _add


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES):
        terminalreporter.write_line(line)
