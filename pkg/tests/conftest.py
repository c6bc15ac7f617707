import pytest

from npp.harness.experiments import SCENARIOS, ExperimentConfig, replicate_metrics

ACCEPTANCE_KEY = pytest.StashKey[dict]()

SIM_N_GRID = (5, 50, 500)
SIM_REPLICATES = 100
# extra well-specified n=500 replicates for the 200-simulation coverage check
COVERAGE_EXTRA = range(100, 200)


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])


@pytest.fixture
def acceptance(request):
    """``report(k, ok, detail)`` records one pass/fail line for criterion ``k`` and asserts ``ok``."""
    store = request.config.stash[ACCEPTANCE_KEY]

    def report(k, ok, detail):
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'} | {detail}"
        store[k] = line
        print(line)
        assert ok, line

    return report


@pytest.fixture(scope="session")
def simulation():
    """Metrics per ``(scenario, n, replicate)`` for the synthetic studies, computed once per session."""
    cfg = ExperimentConfig(divergences=("mmd", "wasserstein"))
    out = {}
    for s in SCENARIOS:
        for n in SIM_N_GRID:
            for r in range(SIM_REPLICATES):
                out[s, n, r] = replicate_metrics(cfg, s, n, r)
    for r in COVERAGE_EXTRA:
        out["well_specified", 500, r] = replicate_metrics(cfg, "well_specified", 500, r, ("median",))
    return cfg, out
