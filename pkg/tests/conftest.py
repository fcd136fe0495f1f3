import numpy as np
import pytest

from spikemesh import phantoms
from spikemesh.pipeline import run_annotation

# lines collected by test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []

CONE = ((0.0, 0.0, 1.0), 8.0, 15.0)  # direction, length above the ball (mm), half-angle (deg)
BUMP = ((0.0, 0.0, 1.0), 4.0)  # direction, bump radius (mm)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cone_mask():
    return phantoms.spiked_sphere_mask(8.0, 0.5, cones=[CONE])


@pytest.fixture(scope="session")
def cone_result(cone_mask):
    return run_annotation(cone_mask)


@pytest.fixture(scope="session")
def bump_result():
    return run_annotation(phantoms.spiked_sphere_mask(8.0, 0.5, bumps=[BUMP]))


@pytest.fixture(scope="session")
def sphere_result():
    return run_annotation(phantoms.icosphere_mask(8.0, 0.5))


@pytest.fixture(scope="session")
def cone_bump_result():
    return run_annotation(phantoms.spiked_sphere_mask(
        8.0, 0.5, cones=[CONE], bumps=[((0.0, 0.0, -1.0), 4.0)]))
