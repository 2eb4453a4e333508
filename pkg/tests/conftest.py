"""Collects the acceptance verdicts and prints them after the run."""
import pytest

_VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """``verdict(n, ok, detail)`` records criterion n, then the test asserts ok."""

    def record(n: int, ok: bool, detail: str):
        _VERDICTS[n] = (bool(ok), detail)
        assert ok, f"criterion {n}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        ok, detail = _VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
