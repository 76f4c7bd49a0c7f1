import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cmcert.normalform import build_phi
from cmcert.rtbp import SUN_EARTH_MU, RtbpParams

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

MU = SUN_EARTH_MU


@pytest.fixture(scope="session")
def params():
    return RtbpParams.certified(MU)


@pytest.fixture(scope="session")
def phi(params):
    return build_phi(params, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance lines, echoed again at the end of the run
_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
