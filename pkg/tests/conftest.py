import numpy as np
import pytest
from hypothesis import settings

from pinf import build_disk, build_interval

settings.register_profile("pinf", deadline=None, max_examples=40)
settings.load_profile("pinf")


@pytest.fixture(scope="session")
def interval400():
    return build_interval(-1.0, 1.0, 400)


@pytest.fixture(scope="session")
def disk16():
    return build_disk(16, 64)


@pytest.fixture(scope="session")
def disk_angle(disk16):
    xy = disk16.nodes[disk16.boundary_nodes]
    return np.arctan2(xy[:, 1], xy[:, 0])
