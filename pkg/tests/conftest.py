import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from voxtrack.carving import GridSpec
from voxtrack.geometry import Camera, look_at_camera

DATA_DIR = Path(__file__).parent / "data"

ROOM = 10.1  # meters; grids below sit in its corner at the world origin

KINECT_K = np.array([[366.0, 0.0, 255.5],
                     [0.0, 366.0, 211.5],
                     [0.0, 0.0, 1.0]])


def corner_rig(width=512, height=424, room=ROOM):
    """Four elevated corner cameras looking at the room center."""
    eyes = [(0.4, 0.4, 2.3), (room - 0.4, 0.4, 2.4),
            (room - 0.4, room - 0.4, 2.2), (0.4, room - 0.4, 2.5)]
    return [look_at_camera(f"cam{i}", eye, (room / 2, room / 2, 0.9),
                           KINECT_K, width, height, min_depth=0.4, max_depth=16.0)
            for i, eye in enumerate(eyes)]


@pytest.fixture(scope="session")
def desk_spec():
    """CI-scale grid: 101x101x43 at 10 cm."""
    return GridSpec(origin=(0.0, 0.0, 0.0), voxel_size=0.1, dims=(101, 101, 43))


@pytest.fixture(scope="session")
def full_spec():
    """Production-scale grid: 201x201x85 at 5 cm."""
    return GridSpec(origin=(0.0, 0.0, 0.0), voxel_size=0.05, dims=(201, 201, 85))


@pytest.fixture(scope="session")
def rig():
    return corner_rig()


@pytest.fixture(scope="session")
def rig_rays(rig):
    return [cam.ray_directions() for cam in rig]


@pytest.fixture(scope="session")
def identity_camera():
    """Axis-aligned camera at the origin looking along world +Z."""
    return Camera(name="ident", intrinsics=np.eye(3), rotation=np.eye(3),
                  translation=np.zeros(3), width=9, height=9,
                  min_depth=0.1, max_depth=100.0)


@pytest.fixture(scope="session")
def people_weights_path():
    path = DATA_DIR / "people_toy.w4db"
    if not path.exists():
        pytest.skip("toy people weights not generated (tools/fit_toy_weights.py)")
    return path


@pytest.fixture(scope="session")
def action_weights_path():
    path = DATA_DIR / "action_toy.w4db"
    if not path.exists():
        pytest.skip("toy action weights not generated (tools/fit_toy_weights.py)")
    return path
