import pytest

# One line per acceptance criterion, printed after the run so the
# pass/fail verdicts survive pytest's output capture.
CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criteria():
    def record(num: int, ok: bool, detail: str) -> None:
        CRITERIA[num] = (ok, detail)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(CRITERIA):
        ok, detail = CRITERIA[num]
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d}: {verdict}  {detail}")
