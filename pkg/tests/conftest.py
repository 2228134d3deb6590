import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# Notes attached by acceptance tests, printed with the PASS/FAIL summary.
ACCEPTANCE_NOTES: dict[str, list[str]] = {}


def pytest_terminal_summary(terminalreporter):
    rows = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid or report.when not in ("call", "setup"):
                continue
            if outcome == "passed" and report.when != "call":
                continue
            rows.append((nodeid.split("::")[-1], "PASS" if outcome == "passed" else "FAIL"))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in sorted(rows, key=lambda r: int(r[0].split("_")[2])):
        terminalreporter.write_line(f"{verdict}  {name}")
        for note in ACCEPTANCE_NOTES.get(name, []):
            terminalreporter.write_line(f"      {note}")
