import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

ACCEPTANCE_LINES = []


def report(criterion, passed, detail):
    """Record one acceptance verdict; all verdicts are printed at the end of the run."""
    line = f"[criterion {criterion}] {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
