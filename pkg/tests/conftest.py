import numpy as np
import pytest

from nscontrol import forms
from nscontrol.grid import Level, build_hierarchy


@pytest.fixture(scope="session")
def level4():
    return Level(4)


@pytest.fixture(scope="session")
def level8():
    return Level(8)


@pytest.fixture(scope="session")
def hierarchy_4_8():
    return build_hierarchy(4, 2)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260826)


def interp_velocity(level, f1, f2):
    return forms.interpolate_q2(level, f1, f2)
