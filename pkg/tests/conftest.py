import pytest

CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """Store the outcome of one acceptance criterion for the end-of-run summary."""

    def _record(number: int, ok: bool, detail: str):
        CRITERIA[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")

    return _record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
