import pytest

# one line per acceptance criterion, printed after the run
ACCEPTANCE: list = []


@pytest.fixture
def verdict():
    def record(number: int, title: str, ok: bool, detail: str = ""):
        ACCEPTANCE.append((number, f"criterion {number} {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip()))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
