"""Prints one PASS/FAIL line per acceptance criterion after the run."""

import pytest

KEY = "acceptance"


@pytest.fixture
def criterion(request):
    """``criterion(name, detail)`` labels the running test as an acceptance criterion."""

    def record(name: str, detail: str = ""):
        request.node.user_properties[:] = [p for p in request.node.user_properties if p[0] != KEY]
        request.node.user_properties.append((KEY, (name, detail)))

    return record


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" and outcome != "error":
                continue
            for key, value in getattr(rep, "user_properties", ()):
                if key == KEY:
                    lines.append((rep.location[0], rep.location[1] or 0, "PASS" if outcome == "passed" else "FAIL", *value))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for *_, verdict, name, detail in sorted(lines, key=lambda l: l[:2]):
        terminalreporter.write_line(f"{verdict}  {name}: {detail}")
