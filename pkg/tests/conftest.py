import _report


def pytest_terminal_summary(terminalreporter):
    lines = _report.summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
