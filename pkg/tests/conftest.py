import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vlmteam import data_path, load_scene  # noqa: E402
from vlmteam.scene import GoalSpec, PixelCoord, Scene, SceneObject  # noqa: E402


@pytest.fixture(scope="session")
def lid_scene():
    return load_scene(data_path("lidded_box.json"))


@pytest.fixture(scope="session")
def square_scene():
    """One 100x100 block in the middle of the canvas.  Shared; do not mutate."""
    block = SceneObject("block", "rectangle", "red", PixelCoord(320, 240), (50.0, 50.0))
    return Scene(640, 480, [block], GoalSpec("place_in_region", {}))


@pytest.fixture(scope="session")
def circle_scene():
    ball = SceneObject("ball", "circle", "red", PixelCoord(320, 240), 50.0)
    return Scene(640, 480, [ball], GoalSpec("place_in_region", {}))
