"""Shared pytest hooks: the acceptance suite prints one verdict line per criterion."""

ACCEPTANCE_RESULTS = {}


def record(criterion: int, title: str, passed: bool, detail: str = ""):
    ACCEPTANCE_RESULTS[criterion] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[k]
        verdict = "PASS" if passed else "FAIL"
        line = f"[{verdict}] {k:2d}. {title}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
