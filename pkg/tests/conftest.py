from pathlib import Path

import numpy as np
import pytest

from ekfservo.camera import Intrinsics
from ekfservo.config import load_scenario
from ekfservo.keypoints import ObjectModel, load_object_points

REPO = Path(__file__).resolve().parent.parent
SCENARIOS = REPO / "scenarios"

# one line per acceptance criterion, echoed after the test summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def model() -> ObjectModel:
    return load_object_points(REPO / "models" / "bracket.xyz")


@pytest.fixture(scope="session")
def intr() -> Intrinsics:
    return Intrinsics(460.0, 460.0, 320.0, 240.0, 640, 480)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def scenario(name: str):
    return load_scenario(SCENARIOS / f"{name}.json")


@pytest.fixture(scope="session")
def nominal_scenario():
    return scenario("nominal")


@pytest.fixture(scope="session")
def noise_free_scenario():
    return scenario("noise_free")
