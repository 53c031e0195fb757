import pytest

from xr3.face_mapping import load_face_config
from xr3.model import load_robot_model


@pytest.fixture(scope="session")
def model():
    return load_robot_model()


@pytest.fixture(scope="session")
def face_cfg():
    return load_face_config()
