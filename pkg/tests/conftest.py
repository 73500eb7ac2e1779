"""Shared fixtures plus the acceptance-summary terminal hook."""

import pytest

from fedforge.logreg import bundled_sna_path
from fedforge.transport import free_base_port

# Short labels for the acceptance gate; keyed by criterion number parsed out
# of test names like test_criterion_3_coefficient_drift.
ACCEPTANCE_LABELS = {
    1: "exact-equality chain across phases 2/3/4",
    2: "accuracy in [0.85, 0.95], equal across phases 2-4",
    3: "phase-2 coefficient drift vs phase 1 below 15%",
    4: "analytic gradient matches finite differences (<1e-5)",
    5: "100 reorder schedules give bit-identical results",
    6: "message counts: 4 centralized / 12 decentralized (n=3)",
    7: "wire fidelity for 1000 vectors incl. socket hop",
    8: "degenerate cases (epochs=0, k=1, zero variance, tie)",
}


@pytest.fixture
def sna_path():
    return bundled_sna_path()


@pytest.fixture
def port_for():
    """Callable giving a currently free base port for an n-node run."""
    return free_base_port


def _criterion_number(nodeid: str):
    if "test_acceptance.py::test_criterion_" not in nodeid:
        return None
    tail = nodeid.split("test_criterion_", 1)[1]
    digits = ""
    for ch in tail:
        if not ch.isdigit():
            break
        digits += ch
    return int(digits) if digits else None


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            number = _criterion_number(getattr(report, "nodeid", ""))
            if number is None:
                continue
            ok = status == "passed"
            outcomes[number] = outcomes.get(number, True) and ok
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(outcomes):
        verdict = "PASS" if outcomes[number] else "FAIL"
        label = ACCEPTANCE_LABELS.get(number, "")
        terminalreporter.write_line(f"criterion {number}: {verdict}  {label}")
