import pytest

_LINES = []


@pytest.fixture
def criterion_report():
    """Record ``(criterion, passed, detail)``; printed in the terminal summary."""

    def record(name, passed, detail):
        _LINES.append(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
