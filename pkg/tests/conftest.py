import pytest

from opcancel.probes import blowup_dichotomy

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture(scope="session")
def dichotomy_rows():
    """Blow-up probe next to the WC verdict for every gallery operator with k >= n."""
    return {row.operator: row for row in blowup_dichotomy()}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
