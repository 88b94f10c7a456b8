"""Collects one verdict line per acceptance criterion and prints them after the run."""

ACCEPTANCE: dict[int, str] = {}


def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
    ACCEPTANCE[number] = f"criterion {number} {title}: {'PASS' if ok else 'FAIL'}" + (f"  ({detail})" if detail else "")
    print(ACCEPTANCE[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
