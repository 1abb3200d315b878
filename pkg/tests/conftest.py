import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance tests tag themselves with record_property("criterion", ...); the
# summary prints one PASS/FAIL line per criterion at the end of the run.
_criteria: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    name = props["criterion"]
    failed = report.failed
    if report.when == "call" or failed:
        prev = _criteria.get(name, ("PASS", ""))[0]
        status = "FAIL" if failed or prev == "FAIL" else ("SKIP" if report.skipped else "PASS")
        _criteria[name] = (status, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria):
        status, detail = _criteria[name]
        terminalreporter.write_line(f"{status}  {name}" + (f"  ({detail})" if detail else ""))
