import pytest

CRITERIA = {
    1: "head approximation guarantee",
    2: "tail bicriterion guarantee",
    3: "min-cost-flow matches Lagrangian",
    4: "head boosting",
    5: "noiseless recovery",
    6: "noise robustness",
    7: "per-iteration contraction",
    8: "RIP-1 loop",
    9: "adversarial tail-only demo",
    10: "model counting bound",
    11: "model addition",
}

_results: dict = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record ``(passed, detail)`` for an acceptance criterion."""

    def record(number: int, passed: bool, detail: str = "") -> bool:
        _results[number] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        if n in _results:
            ok, detail = _results[n]
            tr.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n:2d} ({title}): {detail}")
        else:
            tr.write_line(f"FAIL criterion {n:2d} ({title}): not run")
