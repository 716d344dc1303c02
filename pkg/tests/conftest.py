import pytest

_LINES = []


@pytest.fixture(scope="session")
def verdict():
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def record(name, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} {name}: {detail}"
        _LINES.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
