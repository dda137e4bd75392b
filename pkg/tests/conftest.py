import pytest

_CRITERIA: dict[tuple[int, str], str] = {}


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def record(number: int, passed: bool | None, text: str, tag: str = "") -> bool | None:
        # passed=None marks an informational line that is not itself a criterion verdict
        verdict = "INFO" if passed is None else ("PASS" if passed else "FAIL")
        name = f"criterion {number}{' ' + tag if tag else ''}"
        _CRITERIA[(number, tag)] = f"{name}: {verdict}  {text}"
        print(_CRITERIA[(number, tag)])
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[key])
