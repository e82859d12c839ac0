import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rnaforge.thermo import EnergyParams, zero_params

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# parameter sets used by the oracle comparisons
PARAM_SETS = {
    "default": EnergyParams(),
    "zero": zero_params(),
    "zero_h0": zero_params(h_min=0),
    "odd": EnergyParams({"CG": -17, "GC": -23, "AU": -9, "UA": -14, "GU": 4, "UG": -2},
                        e_stack=7, h_min=1, rt=0.45),
    "strong": EnergyParams({"CG": -40, "GC": -35, "AU": -25, "UA": -20, "GU": -5, "UG": -12},
                           e_stack=-15, h_min=2, rt=0.61633),
}


@pytest.fixture(params=sorted(PARAM_SETS))
def params(request):
    return PARAM_SETS[request.param]


def random_sequence(rng, n):
    return "".join(rng.choice(list("ACGU"), size=n))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting ---------------------------------------------------------------

CRITERIA = [f"A{i}" for i in range(1, 12)]
_OUTCOMES = {}  # criterion -> list of (passed, detail)
_DETAILS = {}   # test nodeid -> detail text


@pytest.fixture
def note(request):
    """Attach a one-line measurement summary to the running acceptance test."""
    def record(text):
        _DETAILS[request.node.nodeid] = text
        print(f"[{request.node.get_closest_marker('criterion').args[0]}] {text}")
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = _DETAILS.get(item.nodeid, "")
        if not rep.passed and not detail:
            detail = f"{rep.when} {rep.outcome}"
        _OUTCOMES.setdefault(marker.args[0], []).append((rep.passed, f"{item.name}: {detail}"))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in CRITERIA:
        results = _OUTCOMES.get(c)
        if not results:
            tr.write_line(f"{c:<4} NOT RUN")
            continue
        verdict = "PASS" if all(ok for ok, _ in results) else "FAIL"
        tr.write_line(f"{c:<4} {verdict}  " + " | ".join(d for _, d in results))
