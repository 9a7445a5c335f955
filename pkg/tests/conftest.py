import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from semvox.geometry import CameraIntrinsics, PoseSE3

# lines printed by the acceptance module, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_pose(rng, scale=5.0) -> PoseSE3:
    return PoseSE3(Rotation.random(random_state=rng).as_matrix(), rng.uniform(-scale, scale, 3))


def random_intrinsics(rng, width=64, height=48) -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=rng.uniform(50, 2000),
        fy=rng.uniform(50, 2000),
        cx=rng.uniform(0, width - 1),
        cy=rng.uniform(0, height - 1),
        width=width,
        height=height,
        skew=rng.uniform(-5, 5),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
