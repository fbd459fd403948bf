"""Shared pytest plumbing for the betof test suite.

The acceptance tests append one human-readable pass/fail line per criterion
to ACCEPTANCE_LINES; the terminal-summary hook echoes them after the normal
pytest report so the criterion verdicts are visible in any -v run.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
