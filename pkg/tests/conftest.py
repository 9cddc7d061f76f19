import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

CRITERIA = {
    1: "buffer arithmetic: one 1526-byte frame fits in 1600, two do not",
    2: "CRC-32 check values and bitwise oracle agreement",
    3: "filtering pipeline drop reasons and transparent forwarding",
    4: "forwarding matches graph-propagation oracle",
    5: "latency = injection + 2L + P",
    6: "sequence integrity: clean runs, k deletions -> k skips, wrap",
    7: "BAG law holds over randomized schedules",
    8: "identical traces for identical seeds",
    9: "broadcast copy count",
}

_results: dict[int, list[str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    m = re.search(r"::test_c(\d+)_", report.nodeid)
    if not m:
        return
    if report.when == "call" or report.outcome == "failed":
        _results.setdefault(int(m.group(1)), []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n, text in CRITERIA.items():
        outcomes = _results.get(n)
        if outcomes is None:
            status = "NOT RUN"
        else:
            status = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  {text}")
