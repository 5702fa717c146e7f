import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line; the run prints them all in the terminal summary."""
    def record(n, ok, detail):
        line = f"AC{n} {'PASS' if ok else 'FAIL'} {detail}"
        print(line)
        request.config.stash[VERDICTS].append((n, line))
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
