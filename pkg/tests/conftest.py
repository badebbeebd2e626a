import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Run an acceptance check and record a PASS/FAIL line for the summary."""
    results = request.config.stash.setdefault(_RESULTS, [])

    def check(number, title, fn):
        try:
            detail = fn()
        except BaseException as exc:
            results.append((number, "FAIL", title, f"{type(exc).__name__}: {exc}".splitlines()[0]))
            raise
        results.append((number, "PASS", title, detail or ""))

    return check


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, title, detail in sorted(results):
        line = f"[{status}] criterion {number:>2}: {title}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)
