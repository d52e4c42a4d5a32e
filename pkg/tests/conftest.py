from __future__ import annotations

from pathlib import Path

import pytest

from idc.effects import register_builtin_machines

EXAMPLES = Path(__file__).resolve().parents[1] / "src" / "idc" / "examples"

# criterion number -> (passed, summary); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def examples() -> Path:
    return EXAMPLES


@pytest.fixture
def registry(tmp_path):
    return register_builtin_machines(tmp_path / "sandbox", http_fixtures={"https://fixture.test/a": {"ok": True}})


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, summary = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {summary}")
