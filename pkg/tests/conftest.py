import numpy as np
import pytest

from pushgrasp import geometry as geo
from pushgrasp import world
from pushgrasp.codec import default_orientation_set


@pytest.fixture(scope="session")
def ws():
    return world.Workspace()


@pytest.fixture(scope="session")
def oset():
    return default_orientation_set()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_scene(objects, target_id=0, ws=None):
    return world.Scene(workspace=ws or world.Workspace(), objects=tuple(objects),
                       target_id=target_id)


def disk_obj(oid, x, y, r=0.03, h=0.03, target=False, color=None):
    color = color or ((0.1, 0.8, 0.1) if target else (0.6, 0.3, 0.3))
    return world.RigidObject(oid, geo.Disk(r), (x, y, 0.0), h, color, target)


def rect_obj(oid, x, y, w, d, yaw=0.0, h=0.03, target=False, color=None):
    color = color or ((0.1, 0.8, 0.1) if target else (0.3, 0.3, 0.6))
    return world.RigidObject(oid, geo.rectangle(w, d), (x, y, yaw), h, color, target)
