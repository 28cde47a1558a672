import pytest

_LINES = []


@pytest.fixture
def report():
    """Record a one-line acceptance verdict; shown in the terminal summary."""
    def emit(label, ok, detail=""):
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        _LINES.append(line)
        print(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
