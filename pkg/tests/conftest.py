from verdicts import LINES


def pytest_terminal_summary(terminalreporter):
    if LINES:
        terminalreporter.section("acceptance criteria")
        for name in sorted(LINES, key=lambda n: int(n[1:])):
            terminalreporter.write_line(LINES[name])
