import numpy as np
import pytest

from monitorsim import mapgen
from monitorsim.config import REFERENCE_MAP_SEED, CrowdConfig, RunConfig
from monitorsim.mapgen import FREE, GridWorld, Room, WALL, Zone


@pytest.fixture(scope="session")
def reference_world():
    """The 80x40 m, 12-room, 7-zone reference layout."""
    return mapgen.generate_map(REFERENCE_MAP_SEED)


@pytest.fixture(scope="session")
def small_world():
    """A compact generated map for cheap episode tests."""
    return mapgen.generate_map(3, mapgen.MapParams(width_m=40.0, height_m=24.0, n_rooms=5))


def make_single_room_world(width_m=20.0, height_m=12.0, cell=0.5):
    nx, ny = int(width_m / cell), int(height_m / cell)
    cells = np.full((ny, nx), WALL, dtype=np.uint8)
    cells[1:-1, 1:-1] = FREE
    room = Room(0, cell, cell, width_m - cell, height_m - cell)
    return GridWorld(cells, cell, [room], [Zone(0, (0,))])


@pytest.fixture(scope="session")
def open_room_world():
    return make_single_room_world()


@pytest.fixture()
def default_cfg():
    return RunConfig()


def tiny_cfg(**kw):
    """Small, fast run configuration for episode-level tests."""
    cfg = RunConfig(horizon=kw.pop("horizon", 60))
    cfg.map.width_m = 40.0
    cfg.map.height_m = 24.0
    cfg.map.n_rooms = 5
    cfg.map_seed = 3
    cfg.crowd.n_humans = kw.pop("n_humans", 6)
    cfg.robots.n_robots = kw.pop("n_robots", 3)
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


@pytest.fixture(scope="session")
def small_crowd(small_world):
    cfg = CrowdConfig(n_humans=6)
    from monitorsim.crowd import synthesize_crowd

    return synthesize_crowd(small_world, cfg, 60, 1.0, seed=5)
