import time

import pytest

from picof.experiments import run_fuelcell, run_toy


class RunCache:
    """Memoized scenario runs shared across test modules, with wall times."""

    def __init__(self):
        self._runs = {}

    def get(self, kind: str, seed: int, picof: bool):
        key = (kind, seed, picof)
        if key not in self._runs:
            runner = run_toy if kind == "toy" else run_fuelcell
            start = time.perf_counter()
            res = runner(seed, picof)
            self._runs[key] = (res, time.perf_counter() - start)
        return self._runs[key]

    def result(self, kind, seed, picof):
        return self.get(kind, seed, picof)[0]


@pytest.fixture(scope="session")
def runs():
    return RunCache()


ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def acceptance_report():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
