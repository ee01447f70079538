"""Shared pytest wiring: the acceptance-criterion verdict summary.

Verdict lines recorded via record_verdict() are replayed after the run,
where the terminal writer is no longer subject to output capture, so the
one-line-per-criterion report shows up in any pytest invocation.
"""

VERDICTS = []


def record_verdict(line: str) -> None:
    VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in VERDICTS:
        terminalreporter.write_line(line)
