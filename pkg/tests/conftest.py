import time

import pytest

_LINES = pytest.StashKey[list]()
_START = pytest.StashKey[float]()
SUITE_BUDGET_S = 300.0


def pytest_configure(config):
    config.stash[_LINES] = []
    config.stash[_START] = time.perf_counter()


@pytest.fixture
def criterion(request):
    """Record one acceptance line and fail the test if ``ok`` is false."""
    lines = request.config.stash[_LINES]

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash[_LINES]
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines, key=lambda item: item[0]):
        terminalreporter.write_line(line)
    elapsed = time.perf_counter() - config.stash[_START]
    ok = elapsed < SUITE_BUDGET_S
    terminalreporter.write_line(
        f"criterion 9 (suite runtime): {'PASS' if ok else 'FAIL'}  {elapsed:.1f} s < {SUITE_BUDGET_S:.0f} s"
    )
