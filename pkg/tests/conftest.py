"""Shared test plumbing: the acceptance suite's one-line-per-criterion summary."""

ACCEPTANCE = {}


def record(criterion: str, passed: bool, detail: str = ""):
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"[criterion {criterion}] {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("ab")), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>3}: {'PASS' if ok else 'FAIL'}  {detail}")
