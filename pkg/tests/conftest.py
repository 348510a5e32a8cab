import re

import pytest

_RESULTS: dict[str, tuple[str, str]] = {}


@pytest.fixture
def criterion():
    """``criterion(key, ok, detail)`` records one acceptance line; returns ``ok``."""

    def record(key: str, ok, detail: str = ""):
        _RESULTS[key] = ("PASS" if ok is True else "SKIP" if ok is None else "FAIL", detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    def natural(key):
        return [(0, int(p), "") if p.isdigit() else (1, 0, p) for p in re.findall(r"\d+|\D+", key)]

    for key in sorted(_RESULTS, key=natural):
        status, detail = _RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {status}  {detail}")
