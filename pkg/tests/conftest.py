import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fabricore.kinematics import load_model
from fabricore.scenario import data_path, load_scenario


@pytest.fixture(scope="session")
def planar_model():
    return load_model(data_path("robots/planar_3dof.json"))


@pytest.fixture(scope="session")
def hand_model():
    return load_model(data_path("robots/hand_16dof.json"))


@pytest.fixture(scope="session")
def desk_model():
    return load_model(data_path("robots/arm_hand_23dof.json"))


@pytest.fixture(scope="session")
def desk_scenario():
    return load_scenario(data_path("scenarios/desk_grasp.json"))


@pytest.fixture(scope="session")
def desk_engine(desk_scenario):
    return desk_scenario.build_engine()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
