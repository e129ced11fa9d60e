import pytest

_CRITERIA = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one acceptance line: ``criterion(number, ok, detail)``."""

    def record(number, ok, detail):
        _CRITERIA[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_CRITERIA[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])
