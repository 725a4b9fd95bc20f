from __future__ import annotations

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None)
settings.load_profile("default")

_LINES: dict[str, str] = {}


@pytest.fixture
def acceptance_line():
    """Record the one-line verdict for an acceptance criterion."""

    def record(key: str, passed: bool, detail: str) -> bool:
        line = f"{key} {'PASS' if passed else 'FAIL'}: {detail}"
        _LINES[key] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_LINES, key=lambda k: (len(k.split()[0]), k)):
        terminalreporter.write_line(_LINES[key])
