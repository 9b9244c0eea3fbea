"""Shared pytest plumbing.

test_acceptance.py appends one "[criterion NN] ... PASS/FAIL" line per
release check into CRITERION_LINES; this hook replays them in the
terminal summary so they stay visible even with output capture on.
"""

CRITERION_LINES: list = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if CRITERION_LINES:
        terminalreporter.section("release criteria")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)
