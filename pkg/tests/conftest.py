import numpy as np
import pytest

from frontiernav import world
from frontiernav.world import FLOOR, OBSTACLE, ObjectInstance, Scene


def make_scene(cells: np.ndarray, objects=(), resolution: float = 0.1,
               scene_id: str = "test", seed: int = 0) -> Scene:
    return Scene(id=scene_id, seed=seed, resolution=resolution,
                 cells=np.ascontiguousarray(cells, dtype=np.uint8),
                 objects=tuple(objects))


def open_room(width: int = 30, height: int = 30) -> np.ndarray:
    """Free interior with a one-cell obstacle border."""
    cells = np.full((height, width), OBSTACLE, dtype=np.uint8)
    cells[1:-1, 1:-1] = FLOOR
    return cells


def object_at(category: str, cells, resolution: float = 0.1) -> ObjectInstance:
    fp = frozenset(cells)
    cx = sum(world.cell_center(c, r, resolution)[0] for c, r in fp) / len(fp)
    cy = sum(world.cell_center(c, r, resolution)[1] for c, r in fp) / len(fp)
    return ObjectInstance(category=category, cells=fp, centroid=(cx, cy))


@pytest.fixture
def room_scene():
    """30x30 open room with a single chair against the east wall."""
    cells = open_room()
    chair = [(28, 14), (28, 15)]
    for c, r in chair:
        cells[r, c] = OBSTACLE
    return make_scene(cells, [object_at("chair", chair)])


@pytest.fixture(scope="session")
def generated_scene():
    return world.generate_scene(42)
