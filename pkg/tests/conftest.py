"""Shared pytest configuration.

Collects one-line pass/fail results from the acceptance tests and echoes
them in the terminal summary (pytest captures stdout from passing tests,
so the acceptance suite reports through this hook instead).
"""

acceptance_lines = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
