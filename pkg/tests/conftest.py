import pytest

_REPORT_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Records one pass/fail line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(_REPORT_KEY, [])

    def report(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_REPORT_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
