"""Shared fixtures and the acceptance report printed at the end of a run."""
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE: list[tuple[str, bool, str]] = []


class AcceptanceLog:
    def record(self, name: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE.append((name, bool(passed), detail))
        return bool(passed)


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        tr.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    n_pass = sum(p for _, p, _ in ACCEPTANCE)
    tr.write_line(f"{n_pass}/{len(ACCEPTANCE)} acceptance criteria met")
