import pytest

_RESULTS = []


class AcceptanceLog:
    """Collects one verdict line per acceptance criterion for the terminal summary."""

    def record(self, name: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else "")
        _RESULTS.append(line)
        print(line)
        return ok


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in _RESULTS:
        terminalreporter.write_line(line)
