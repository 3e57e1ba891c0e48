import pytest

_verdicts: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Record one acceptance line: ``verdict("A1", ok, "details")``."""
    def record(name: str, ok, detail: str = "") -> None:
        status = "REPORT" if ok is None else ("PASS" if ok else "FAIL")
        line = f"{name} {status}  {detail}".rstrip()
        _verdicts.append(line)
        with capsys.disabled():
            print(f"\n{line}")
    return record


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in _verdicts:
            terminalreporter.write_line(line)
