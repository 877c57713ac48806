import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from toolimit.kinematics import Joint, KinematicChain, load_chain

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def planar2() -> KinematicChain:
    """Two 1 m links rotating about z."""
    z = np.array([0.0, 0.0, 1.0])
    link = np.eye(4)
    link[0, 3] = 1.0
    joints = (Joint("a", "revolute", z, np.eye(4), -np.pi, np.pi, 2.0),
              Joint("b", "revolute", z, link, -np.pi, np.pi, 2.0))
    return KinematicChain("planar2", joints, link)


@pytest.fixture(scope="session")
def panda():
    return load_chain("panda")


@pytest.fixture(scope="session")
def planar3():
    return load_chain("planar3")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def report_criterion(number, ok: bool, detail: str) -> None:
    """Record one pass/fail line for the acceptance summary."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
