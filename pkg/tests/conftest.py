import pytest

_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record an acceptance verdict, then assert it."""

    def record(number, name, ok, detail=""):
        _VERDICTS[number] = (name, bool(ok), detail)
        assert ok, f"criterion {number} ({name}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        name, ok, detail = _VERDICTS[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {number} {name}: {detail}")
