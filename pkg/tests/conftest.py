import asyncio

import pytest
from hypothesis import settings

settings.register_profile("bulk", max_examples=10_000, deadline=None)


def run(coro):
    return asyncio.run(coro)


@pytest.fixture
def arun():
    return run

# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
