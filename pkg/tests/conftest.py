import sys
import os

# tests import sibling helpers (oracles.py, test_segmentation fixtures) directly
sys.path.insert(0, os.path.dirname(__file__))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print the acceptance scoreboard after the run (one line per criterion)."""
    try:
        import test_acceptance
    except ImportError:
        return
    results = getattr(test_acceptance, "RESULTS", [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, description in sorted(results):
        terminalreporter.write_line(f"[{number}] {'PASS' if ok else 'FAIL'}: {description}")
