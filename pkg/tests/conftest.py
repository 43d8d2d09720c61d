"""Shared pytest plumbing: collect acceptance-gate lines for the summary."""

gate_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if gate_lines:
        terminalreporter.section("acceptance criteria")
        for line in gate_lines:
            terminalreporter.write_line(line)
