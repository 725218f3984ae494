import os
import sys

# keep the determinism checks independent of the host's core count
os.environ.setdefault("STROKELAB_THREADS", "4")
sys.path.insert(0, os.path.dirname(__file__))

_CRITERIA = {}


def record_criterion(number, ok, detail):
    """Remember one acceptance line; printed together at the end of the run."""
    _CRITERIA[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])
