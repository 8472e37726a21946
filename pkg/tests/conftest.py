from __future__ import annotations

import pytest

ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """Record ``(passed, detail)`` for an acceptance criterion number."""
    results = request.config.stash[ACCEPTANCE]

    def record(number: int, passed: bool, detail: str) -> bool:
        results.setdefault(number, []).append((bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[ACCEPTANCE]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        parts = results[number]
        verdict = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {number}: {verdict} | {detail}")
