import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qact.sequences import OcclusionEvent, SyntheticScript, generate_synthetic

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def short_script():
    return SyntheticScript(
        seed=3, length=24, waypoints=((50.0, 50.0), (100.0, 70.0)), speed=1.5,
        occlusions=(OcclusionEvent(12, 4, 1.0),), name="short",
    )


@pytest.fixture(scope="session")
def short_seq(short_script):
    return generate_synthetic(short_script)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
