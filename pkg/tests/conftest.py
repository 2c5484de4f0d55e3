import os
import sys
from pathlib import Path

from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


CRITERIA = {
    1: "gradient suite",
    2: "loss and metric oracles",
    3: "simulator statistics",
    4: "shape learning (monotonicity)",
    5: "negotiation (PIF1)",
    6: "boundary compliance at lambda=1e3",
    7: "regret score attainability",
    8: "pipeline determinism",
    9: "non-monotone generalisation",
}
_outcomes: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        item.user_properties.append(("criterion", marker.args[0]))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    n = props["criterion"]
    entry = _outcomes.setdefault(n, [True, props.get("measured", ""), False])
    if report.when == "call" or report.failed:
        entry[2] = True
        entry[0] = entry[0] and report.passed
        entry[1] = props.get("measured", entry[1])


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        ok, measured, ran = _outcomes[n]
        status = "PASS" if ok and ran else "FAIL"
        line = f"criterion {n}: {status}  {CRITERIA.get(n, '')}"
        terminalreporter.write_line(line + (f"  [{measured}]" if measured else ""))
