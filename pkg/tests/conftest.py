import pytest

RESULTS = {}


@pytest.fixture
def record():
    """Store and print a one-line verdict for an acceptance criterion."""
    def _record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        RESULTS[number] = line
        print(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
