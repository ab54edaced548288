import sys
from pathlib import Path

# make the oracle helpers importable as plain modules
sys.path.insert(0, str(Path(__file__).parent))

import pytest

from robustbragg import bragg, synth


@pytest.fixture(scope="session")
def converged_n0_1():
    """Deterministic |±2ħk⟩ design, stage 1 and stage 2."""
    cfg = bragg.BraggConfig(n0=1)
    model = bragg.build_design_model(cfg)
    lower, upper = bragg.bounds_for(cfg)
    pulse0 = synth.random_initial_pulse(cfg.grid, lower, upper, seed=0)
    report = synth.synthesize(
        model, bragg.initial_state(cfg, model), bragg.target_state(cfg, model), pulse0, synth.SolverConfig()
    )
    return cfg, report


# one pass/fail line per acceptance criterion at the end of the run
_CRITERIA: dict[int, list[str]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number = int(name.split("_")[2])
        if hasattr(report, "wasxfail"):
            # a known, documented miss still counts as a failed criterion
            outcome = "failed" if report.skipped else "passed"
        else:
            outcome = "skipped" if report.skipped else report.outcome
        _CRITERIA.setdefault(number, []).append(outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        outcomes = _CRITERIA[number]
        if "failed" in outcomes:
            verdict = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}")
