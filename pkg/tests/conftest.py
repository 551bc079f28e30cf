import numpy as np
import pytest
from hypothesis import settings

from sklimit.coefficients import default_coefficients
from sklimit.spectral import build_space

settings.register_profile("repo", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("repo")

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def small_space():
    return build_space(1.0, 8, 2)


@pytest.fixture(scope="session")
def small_coeffs(small_space):
    return default_coefficients(small_space)


@pytest.fixture(scope="session")
def space32():
    return build_space(1.0, 32, 2)


@pytest.fixture(scope="session")
def coeffs32(space32):
    return default_coefficients(space32)


def smooth_field(rng, space, scale=0.05, decay=1.5):
    idx = np.arange(1, space.n_modes + 1)
    return scale * rng.standard_normal(space.shape) * idx**-decay


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
