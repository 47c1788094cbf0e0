import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from survrisk.synthetic import SyntheticConfig, generate_synthetic  # noqa: E402


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic(SyntheticConfig(n_patients=150, seed=3))


_CRITERIA: dict[int, tuple[str, str, float]] = {}


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[crit[0]] = ("PASS" if report.outcome == "passed" else "FAIL", crit[1], report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, secs = _CRITERIA[n]
        terminalreporter.write_line(f"{status} criterion {n:2d}: {title} ({secs:.2f} s)")
