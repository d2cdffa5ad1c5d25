import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

LEVELS = np.round(np.arange(1, 50) * 0.02, 2)


@pytest.fixture(scope="session")
def levels():
    return LEVELS.copy()


@pytest.fixture(scope="session")
def small_dataset():
    from solarmos.harness.synth import SynthSpec, synth_generate

    return synth_generate(SynthSpec(n_stations=2, start="2016-06-01", n_days=60), seed=11)


# ---------------------------------------------------------------- acceptance verdicts

_VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_VERDICTS] = {}


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for the criterion named by the test's marker."""
    number = request.node.get_closest_marker("criterion").args[0]
    log = request.config.stash[_VERDICTS]

    def record(ok, detail):
        log[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")

    yield record
    log.setdefault(number, (False, "raised before a verdict was reached"))


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(_VERDICTS, {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(log):
        ok, detail = log[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
