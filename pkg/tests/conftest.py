import os
from importlib import resources

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tcontract.certcheck import parse_certificate
from tcontract.sysmodel import bind_parameters, builtin

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def mg():
    return builtin("moore_greitzer")


@pytest.fixture(scope="session")
def mg12(mg):
    return bind_parameters(mg, {"delta": -1.2})


@pytest.fixture(scope="session")
def mg08(mg):
    return bind_parameters(mg, {"delta": -0.8})


@pytest.fixture(scope="session")
def reference_text():
    return resources.files("tcontract.data").joinpath("moore_greitzer_reference.cert").read_text()


@pytest.fixture(scope="session")
def reference_cert(reference_text):
    return parse_certificate(reference_text)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def strong08(mg08):
    """Strong degree-4 certificate for delta = -0.8 on the ball of radius 3."""
    from tcontract.synth import ball_region, certify, default_ansatz
    region = ball_region(mg08, 3.0, None)
    res = certify(mg08, default_ansatz(mg08, 4, 0, region=region), 0.1, "strong", 500, 100, region=region)
    assert res.ok
    return res.certificate, region


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the terminal summary prints them all."""
    lines = request.config.stash.setdefault(_CRITERIA, [])

    def record(number, passed, detail):
        line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return passed
    return record


_CRITERIA = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
