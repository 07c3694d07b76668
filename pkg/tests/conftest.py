import numpy as np
import pytest

_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def verdict(request):
    """``verdict(k, ok, detail)`` records one acceptance line and asserts ``ok``."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(k: int, ok: bool, detail: str):
        line = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((k, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
