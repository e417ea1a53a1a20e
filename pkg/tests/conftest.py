import pytest

_ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        _ACCEPTANCE[number] = (title, bool(ok), detail)
        print(f"[acceptance {number:2d}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{number:2d}. {'PASS' if ok else 'FAIL'}  {title}  ({detail})")
