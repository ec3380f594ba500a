import numpy as np
import pytest

from lioloc import so3
from lioloc.state import make_state


def random_rotation(rng, max_angle=np.pi - 0.2):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3.exp_so3(axis * rng.uniform(0.0, max_angle))


def random_nav_state(rng, rich=True):
    """A moderately exercised full state for Jacobian/round-trip tests."""
    return make_state(
        rot_wi=random_rotation(rng),
        pos_wi=rng.uniform(-10, 10, 3),
        vel_wi=rng.uniform(-3, 3, 3),
        omega=rng.uniform(-2, 2, 3) if rich else np.zeros(3),
        acc=rng.uniform(-12, 12, 3) if rich else np.zeros(3),
        bias_gyro=rng.uniform(-0.05, 0.05, 3),
        bias_acc=rng.uniform(-0.3, 0.3, 3),
        gravity_w=np.array([0.0, 0.0, -9.81]) + rng.uniform(-0.1, 0.1, 3),
        rot_il=random_rotation(rng, 0.5),
        pos_il=rng.uniform(-0.5, 0.5, 3),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
