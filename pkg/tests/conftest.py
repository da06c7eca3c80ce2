"""Collects the acceptance suite's one-line verdicts and prints them after the run."""

ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, passed, detail: str) -> str:
    verdict = {True: "PASS", False: "FAIL"}.get(passed, str(passed))
    line = f"[{verdict}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
