"""Shared pytest wiring: the acceptance scorecard summary.

Acceptance tests record one verdict line each; printing them from inside a
test would be swallowed by output capture, so they are replayed here as a
terminal summary block after the run.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.ensure_newline()
    terminalreporter.section("acceptance scorecard")
    for line in ACCEPTANCE_LINES:
        terminalreporter.line(line)
