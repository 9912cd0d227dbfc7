import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_dataset():
    """3 steps x 4 images of 16x16, rendered in memory."""
    from stepmetric.data.synth import render_dataset

    return render_dataset(seed=3, steps=3, per_step=4, size=16)


ACCEPTANCE_LINES = {}


@pytest.fixture
def record():
    """``record(n, passed, detail)`` stores the verdict line of acceptance criterion ``n``."""
    def _record(n, passed, detail):
        ACCEPTANCE_LINES[n] = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(ACCEPTANCE_LINES[n])
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
