import pytest

# (criterion number, PASS/FAIL, detail), filled by test_acceptance.py
ACCEPTANCE: list[tuple[int, str, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert it."""

    def record(number: int, ok: bool, detail: str):
        line = (number, "PASS" if ok else "FAIL", detail)
        ACCEPTANCE.append(line)
        print(f"{line[1]} criterion {number}: {detail}")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, verdict, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{verdict} criterion {number}: {detail}")
