import pytest

from pseudocal.factorlab import coefficient_sequence

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def coefficients():
    """``c_0 .. c_5`` for ``d = 2``, ``tau = 4``; shared because each step takes tens of seconds."""
    return coefficient_sequence(2, 4, 5)


@pytest.fixture
def report():
    """Record one pass/fail line for the acceptance summary."""
    def add(number, ok, detail, elapsed):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}  [{elapsed:.1f}s]"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
