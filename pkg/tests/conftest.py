"""Shared pytest wiring: surfaces acceptance verdict lines in the
terminal summary even when output capture is on."""

acceptance_lines = []


def record_criterion(line: str):
    acceptance_lines.append(line)
    print("\n" + line, flush=True)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
