import pytest

_RESULTS: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record an acceptance result; the line is printed in the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _RESULTS[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_RESULTS[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_RESULTS):
            terminalreporter.write_line(_RESULTS[n])
