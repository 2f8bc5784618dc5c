import os
import sys

import pytest

# acceptance campaigns share a cache directory at the repository root
CACHE = os.environ.get("NBCPP_CACHE", os.path.join(os.path.dirname(__file__), "..", ".cache"))


@pytest.fixture(scope="session")
def cache_root():
    os.makedirs(CACHE, exist_ok=True)
    return os.path.abspath(CACHE)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical or campaign test")
    sys.stdout.reconfigure(line_buffering=True)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
