import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("repo", deadline=None, max_examples=60, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

# (number, title, ok, detail) per acceptance criterion, printed at the end
VERDICTS: dict = {}


@pytest.fixture
def verdict():
    def record(n: int, title: str, ok: bool, detail: str = "") -> None:
        VERDICTS[n] = (title, bool(ok), detail)
        print(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}  {detail}")
        assert ok, f"criterion {n} ({title}) failed: {detail}"
    return record


class BundledRuns:
    """Each bundled scenario run at most twice per session, strict BDP checks on."""

    def __init__(self):
        self._first: dict = {}
        self._second: dict = {}

    def get(self, name: str):
        from pbecc.harness.runner import run_scenario

        if name not in self._first:
            self._first[name] = run_scenario(name)
        return self._first[name]

    def rerun_json(self, name: str) -> str:
        from pbecc.harness.metrics import metrics_json
        from pbecc.harness.runner import run_scenario

        if name not in self._second:
            self._second[name] = metrics_json(run_scenario(name)[0])
        return self._second[name]


@pytest.fixture(scope="session")
def bundled():
    return BundledRuns()


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        title, ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {n:2d}. {title}  {detail}")
