import pytest

_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """``criterion(n, title, passed, detail)`` records one acceptance line and
    fails the test when ``passed`` is false."""

    def report(number: int, title: str, passed: bool, detail: str = "") -> None:
        line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {title}" + (f" -- {detail}" if detail else "")
        _CRITERIA.append(line)
        print(line)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
