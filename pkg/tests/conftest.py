import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dynaflow import _kernels

settings.register_profile("dynaflow", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "dynaflow"))

ACCEPTANCE_LINES = []


@pytest.fixture(params=["numba", "numpy"])
def kernel_flavour(request, monkeypatch):
    if request.param == "numba" and not _kernels.NUMBA_AVAILABLE:
        pytest.skip("numba not installed")
    monkeypatch.setattr(_kernels, "USE_NUMBA", request.param == "numba")
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
