import pytest

# criterion number -> list of (clause, passed, detail)
ACCEPTANCE: dict[int, list[tuple[str, bool | None, str]]] = {}


@pytest.fixture(scope="session")
def record():
    def add(criterion: int, clause: str, passed: bool | None, detail: str = "") -> None:
        ACCEPTANCE.setdefault(criterion, []).append((clause, passed, detail))
    return add


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        clauses = ACCEPTANCE[n]
        states = [p for _, p, _ in clauses]
        if all(p is None for p in states):
            verdict = "SKIP"
        elif all(p is not False for p in states):
            verdict = "PASS"
        else:
            verdict = "FAIL"
        body = "; ".join(f"{c}: {'skip' if p is None else 'ok' if p else 'FAILED'}"
                         + (f" ({d})" if d else "") for c, p, d in clauses)
        tr.write_line(f"[{verdict}] criterion {n}: {body}")
