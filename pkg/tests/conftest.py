import pytest

_CRITERIA: dict[str, str] = {}


@pytest.fixture
def criterion():
    """Record the outcome of one acceptance criterion; returns ``ok``."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        _CRITERIA[str(number)] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: int(k)):
        terminalreporter.write_line(_CRITERIA[key])
