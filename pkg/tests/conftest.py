from __future__ import annotations

import pytest

from mftwbc import wsmap
from mftwbc.model import reference_model

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def model():
    return reference_model()


@pytest.fixture(scope="session")
def workspace(model):
    return wsmap.build(model, resolution=0.01, lti_min=0.7)


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number: int, ok: bool | None, detail: str) -> None:
        verdict = "INFO" if ok is None else ("PASS" if ok else "FAIL")
        line = f"criterion {number}: {verdict}  {detail}"
        lines.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
