import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

CRITERIA: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    CRITERIA[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])


@pytest.fixture(scope="session")
def threshold_cache(request):
    """Calibration records shared across test runs (pytest's cache directory)."""
    return str(request.config.cache.mkdir("tunecp-thresholds"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def dyadic(rng, shape, bits=10, scale=4.0):
    """Random values on a coarse binary grid, so sums and differences are exact."""
    return np.round(rng.normal(0.0, scale, shape) * 2**bits) / 2**bits
