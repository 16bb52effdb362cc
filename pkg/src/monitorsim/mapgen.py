"""Procedural indoor layouts: overlapping rooms, L-shaped corridors, semantic zones.

Rooms are axis-aligned rectangles snapped to the cell grid, so every cell is
either fully inside or fully outside a room and point-in-room tests reduce to
cell lookups. Physically overlapping rooms (positive-area intersection) are
grouped into zones.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import FormatError, GenerationFailed, OutOfBounds
from .geometry import WallGeometry

FREE = 0
WALL = 1

MAP_SCHEMA_VERSION = 1
_MAPGEN_STREAM = 101
_PLACEMENT_RETRIES = 200


@dataclass(frozen=True)
class Room:
    id: int
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def centroid(self) -> np.ndarray:
        return np.array([(self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0])

    def contains(self, p) -> bool:
        return self.x0 <= p[0] < self.x1 and self.y0 <= p[1] < self.y1

    def overlaps(self, other: "Room") -> bool:
        """Positive-area intersection; rooms sharing only an edge do not overlap."""
        return (
            min(self.x1, other.x1) > max(self.x0, other.x0)
            and min(self.y1, other.y1) > max(self.y0, other.y0)
        )


@dataclass(frozen=True)
class Zone:
    id: int
    room_ids: tuple


@dataclass(frozen=True)
class MapParams:
    width_m: float = 80.0
    height_m: float = 40.0
    n_rooms: int = 12
    room_size_range: tuple = (6.0, 16.0)
    corridor_width_m: float = 2.0
    cell_size_m: float = 0.5


class GridWorld:
    """Occupancy grid plus room/zone labeling for one indoor layout."""

    def __init__(self, cells: np.ndarray, cell_size_m: float, rooms, zones):
        self.cells = np.ascontiguousarray(cells, dtype=np.uint8)
        self.cell_size_m = float(cell_size_m)
        self.rooms = list(rooms)
        self.zones = list(zones)
        self.height_cells, self.width_cells = self.cells.shape
        self.width_m = self.width_cells * self.cell_size_m
        self.height_m = self.height_cells * self.cell_size_m
        self._geom = None
        self._free_centers = None
        self._room_grid = None
        self._zone_grid = None
        self._buffered_masks = {}

    # -- derived caches ----------------------------------------------------

    @property
    def geometry(self) -> WallGeometry:
        if self._geom is None:
            self._geom = WallGeometry(self.cells, self.cell_size_m)
        return self._geom

    @property
    def room_grid(self) -> np.ndarray:
        """Per-cell lowest room id containing the cell, -1 outside every room."""
        if self._room_grid is None:
            g = np.full(self.cells.shape, -1, dtype=np.int32)
            cs = self.cell_size_m
            for room in sorted(self.rooms, key=lambda r: r.id, reverse=True):
                iy0, iy1 = int(round(room.y0 / cs)), int(round(room.y1 / cs))
                ix0, ix1 = int(round(room.x0 / cs)), int(round(room.x1 / cs))
                g[iy0:iy1, ix0:ix1] = room.id
            self._room_grid = g
        return self._room_grid

    @property
    def zone_grid(self) -> np.ndarray:
        if self._zone_grid is None:
            room_to_zone = np.full(max((r.id for r in self.rooms), default=-1) + 2, -1, dtype=np.int32)
            for z in self.zones:
                for rid in z.room_ids:
                    room_to_zone[rid] = z.id
            g = self.room_grid
            zg = np.where(g >= 0, room_to_zone[np.clip(g, 0, None)], -1).astype(np.int32)
            self._zone_grid = zg
        return self._zone_grid

    def free_cell_centers(self) -> np.ndarray:
        if self._free_centers is None:
            fy, fx = np.nonzero(self.cells == FREE)
            cs = self.cell_size_m
            self._free_centers = np.stack([(fx + 0.5) * cs, (fy + 0.5) * cs], axis=1)
        return self._free_centers

    def buffered_free_mask(self, buffer_m: float) -> np.ndarray:
        """Cells that are free and whose center clearance is >= buffer_m."""
        key = round(buffer_m, 9)
        if key not in self._buffered_masks:
            mask = (self.cells == FREE) & (self.geometry.center_clearance >= buffer_m)
            self._buffered_masks[key] = mask
        return self._buffered_masks[key]

    # -- queries -------------------------------------------------------------

    def in_bounds(self, p) -> bool:
        return 0.0 <= p[0] < self.width_m and 0.0 <= p[1] < self.height_m

    def cell_of(self, p) -> tuple:
        return int(p[1] // self.cell_size_m), int(p[0] // self.cell_size_m)

    def is_free_cell(self, iy: int, ix: int) -> bool:
        if not (0 <= iy < self.height_cells and 0 <= ix < self.width_cells):
            return False
        return self.cells[iy, ix] == FREE

    def is_free_point(self, p) -> bool:
        return self.in_bounds(p) and self.cells[self.cell_of(p)] == FREE

    def n_zones(self) -> int:
        return len(self.zones)


def label_zones(rooms) -> list:
    """Connected components of the rectangle-overlap graph, one zone each.

    Zone ids are assigned in ascending order of each component's minimum
    room id.
    """
    if not rooms:
        raise ValueError("rooms must be nonempty")
    adj = {r.id: [] for r in rooms}
    for i, a in enumerate(rooms):
        for b in rooms[i + 1 :]:
            if a.overlaps(b):
                adj[a.id].append(b.id)
                adj[b.id].append(a.id)
    seen = set()
    components = []
    for r in sorted(rooms, key=lambda r: r.id):
        if r.id in seen:
            continue
        stack = [r.id]
        comp = []
        seen.add(r.id)
        while stack:
            cur = stack.pop()
            comp.append(cur)
            for nb in adj[cur]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        components.append(tuple(sorted(comp)))
    components.sort(key=lambda c: c[0])
    return [Zone(id=i, room_ids=c) for i, c in enumerate(components)]


def zone_of(world: GridWorld, p):
    """Zone id of the lowest-id room containing p, or None (corridor / wall)."""
    if not world.in_bounds(p):
        raise OutOfBounds(f"point {tuple(p)} outside {world.width_m}x{world.height_m} m map")
    z = world.zone_grid[world.cell_of(p)]
    return int(z) if z >= 0 else None


def zones_of_points(world: GridWorld, points: np.ndarray) -> np.ndarray:
    """Vectorized zone_of; -1 for points in no zone. Points must be in bounds."""
    points = np.asarray(points, dtype=float)
    cs = world.cell_size_m
    ix = (points[:, 0] // cs).astype(int)
    iy = (points[:, 1] // cs).astype(int)
    if (ix < 0).any() or (iy < 0).any() or (ix >= world.width_cells).any() or (iy >= world.height_cells).any():
        raise OutOfBounds("point outside map bounds")
    return world.zone_grid[iy, ix]


def _carve_rect_m(cells: np.ndarray, cs: float, x_lo, x_hi, y_lo, y_hi):
    """Free every interior cell whose center falls in the closed rect (meters)."""
    ny, nx = cells.shape
    ix0 = max(1, int(np.ceil(x_lo / cs - 0.5)))
    ix1 = min(nx - 2, int(np.floor(x_hi / cs - 0.5)))
    iy0 = max(1, int(np.ceil(y_lo / cs - 0.5)))
    iy1 = min(ny - 2, int(np.floor(y_hi / cs - 0.5)))
    if ix1 >= ix0 and iy1 >= iy0:
        cells[iy0 : iy1 + 1, ix0 : ix1 + 1] = FREE


def _carve_corridor(cells: np.ndarray, cs: float, a: np.ndarray, b: np.ndarray, width_m: float):
    """L-shaped corridor: horizontal leg at a's y, then vertical leg at b's x."""
    hw = width_m / 2.0
    _carve_rect_m(cells, cs, min(a[0], b[0]) - hw, max(a[0], b[0]) + hw, a[1] - hw, a[1] + hw)
    _carve_rect_m(cells, cs, b[0] - hw, b[0] + hw, min(a[1], b[1]) - hw, max(a[1], b[1]) + hw)


def _free_space_connected(cells: np.ndarray) -> bool:
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    _, n = ndimage.label(cells == FREE, structure=structure)
    return n == 1


def generate_map(seed: int, params: MapParams = MapParams()) -> GridWorld:
    """Generate a connected indoor layout; deterministic in (seed, params)."""
    cs = params.cell_size_m
    if params.width_m <= 0 or params.height_m <= 0:
        raise ValueError("map dimensions must be positive")
    nx = params.width_m / cs
    ny = params.height_m / cs
    if abs(nx - round(nx)) > 1e-9 or abs(ny - round(ny)) > 1e-9:
        raise ValueError("width_m and height_m must be integer multiples of cell_size_m")
    nx, ny = int(round(nx)), int(round(ny))
    if params.n_rooms < 1:
        raise ValueError("n_rooms must be >= 1")

    rng = np.random.default_rng([int(seed), _MAPGEN_STREAM])
    lo_c = max(2, int(round(params.room_size_range[0] / cs)))
    hi_c = int(round(params.room_size_range[1] / cs))

    cells = np.full((ny, nx), WALL, dtype=np.uint8)
    rooms = []
    retries = _PLACEMENT_RETRIES
    while len(rooms) < params.n_rooms:
        w = int(rng.integers(lo_c, hi_c + 1))
        h = int(rng.integers(lo_c, hi_c + 1))
        if w > nx - 2 or h > ny - 2:
            retries -= 1
            if retries <= 0:
                raise GenerationFailed(
                    f"could not place {params.n_rooms} rooms within {_PLACEMENT_RETRIES} retries"
                )
            continue
        ix0 = int(rng.integers(1, nx - 1 - w + 1))
        iy0 = int(rng.integers(1, ny - 1 - h + 1))
        room = Room(
            id=len(rooms),
            x0=ix0 * cs,
            y0=iy0 * cs,
            x1=(ix0 + w) * cs,
            y1=(iy0 + h) * cs,
        )
        cells[iy0 : iy0 + h, ix0 : ix0 + w] = FREE
        if rooms:
            centroids = np.array([r.centroid for r in rooms])
            d = np.linalg.norm(centroids - room.centroid, axis=1)
            nearest = rooms[int(np.argmin(d))]
            _carve_corridor(cells, cs, room.centroid, nearest.centroid, params.corridor_width_m)
        rooms.append(room)

    if not _free_space_connected(cells):
        raise GenerationFailed("carved free space is not a single connected component")

    zones = label_zones(rooms)
    world = GridWorld(cells, cs, rooms, zones)
    _validate(world)
    return world


# -- serialization -----------------------------------------------------------

_RLE_TOKEN = re.compile(r"(\d+)([FW])")


def _rle_encode(cells: np.ndarray) -> str:
    flat = cells.ravel()
    out = []
    boundaries = np.nonzero(np.diff(flat))[0] + 1
    edges = np.concatenate([[0], boundaries, [flat.size]])
    for s, e in zip(edges[:-1], edges[1:]):
        out.append(f"{e - s}{'W' if flat[s] == WALL else 'F'}")
    return "".join(out)


def _rle_decode(text: str, n_cells: int) -> np.ndarray:
    pos = 0
    vals = []
    for m in _RLE_TOKEN.finditer(text):
        if m.start() != pos:
            raise FormatError(f"bad cells run-length encoding near offset {pos}")
        count = int(m.group(1))
        vals.append(np.full(count, WALL if m.group(2) == "W" else FREE, dtype=np.uint8))
        pos = m.end()
    if pos != len(text):
        raise FormatError(f"bad cells run-length encoding near offset {pos}")
    flat = np.concatenate(vals) if vals else np.empty(0, dtype=np.uint8)
    if flat.size != n_cells:
        raise FormatError(f"cells encode {flat.size} cells, expected {n_cells}")
    return flat


def world_to_dict(world: GridWorld) -> dict:
    return {
        "schema_version": MAP_SCHEMA_VERSION,
        "cell_size_m": world.cell_size_m,
        "width_cells": world.width_cells,
        "height_cells": world.height_cells,
        "cells": _rle_encode(world.cells),
        "rooms": [
            {"id": r.id, "x0": r.x0, "y0": r.y0, "x1": r.x1, "y1": r.y1} for r in world.rooms
        ],
        "zones": [{"id": z.id, "room_ids": list(z.room_ids)} for z in world.zones],
    }


def save_map(world: GridWorld, path):
    with open(path, "w") as fh:
        json.dump(world_to_dict(world), fh, indent=1)
        fh.write("\n")


def world_from_dict(data: dict) -> GridWorld:
    try:
        cs = float(data["cell_size_m"])
        w = int(data["width_cells"])
        h = int(data["height_cells"])
        cells = _rle_decode(data["cells"], w * h).reshape(h, w)
        rooms = [
            Room(id=int(r["id"]), x0=float(r["x0"]), y0=float(r["y0"]), x1=float(r["x1"]), y1=float(r["y1"]))
            for r in data["rooms"]
        ]
        zones = [Zone(id=int(z["id"]), room_ids=tuple(sorted(int(i) for i in z["room_ids"]))) for z in data["zones"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed map file: {exc}") from exc
    world = GridWorld(cells, cs, rooms, zones)
    _validate(world)
    return world


def load_map(path) -> GridWorld:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"map file is not valid JSON: {exc}") from exc
    return world_from_dict(data)


def _validate(world: GridWorld):
    """Enforce every GridWorld invariant; raises FormatError on violation."""
    cs = world.cell_size_m
    if cs <= 0:
        raise FormatError("cell_size_m must be positive")
    if not _free_space_connected(world.cells):
        raise FormatError("free cells do not form a single 4-connected component")
    border = np.concatenate(
        [world.cells[0, :], world.cells[-1, :], world.cells[:, 0], world.cells[:, -1]]
    )
    if (border != WALL).any():
        raise FormatError("map border must be a full wall ring")
    ids = sorted(r.id for r in world.rooms)
    if ids != list(range(len(world.rooms))):
        raise FormatError("room ids must be 0..n_rooms-1")
    for r in world.rooms:
        if not (r.x0 < r.x1 and r.y0 < r.y1):
            raise FormatError(f"room {r.id} has an empty rect")
        if r.x0 < cs or r.y0 < cs or r.x1 > world.width_m - cs or r.y1 > world.height_m - cs:
            raise FormatError(f"room {r.id} is not strictly inside the border wall")
        for v in (r.x0 / cs, r.y0 / cs, r.x1 / cs, r.y1 / cs):
            if abs(v - round(v)) > 1e-9:
                raise FormatError(f"room {r.id} rect is not aligned to the cell grid")
        iy0, iy1 = int(round(r.y0 / cs)), int(round(r.y1 / cs))
        ix0, ix1 = int(round(r.x0 / cs)), int(round(r.x1 / cs))
        if (world.cells[iy0:iy1, ix0:ix1] != FREE).any():
            raise FormatError(f"room {r.id} interior contains wall cells")
    assigned = [rid for z in world.zones for rid in z.room_ids]
    if sorted(assigned) != ids or len(assigned) != len(set(assigned)):
        raise FormatError("zones must partition the set of rooms")
    zids = sorted(z.id for z in world.zones)
    if zids != list(range(len(world.zones))):
        raise FormatError("zone ids must be 0..Z-1")
    by_id = {r.id: r for r in world.rooms}
    for z in world.zones:
        if not z.room_ids:
            raise FormatError(f"zone {z.id} is empty")
        if len(z.room_ids) == 1:
            continue
        members = set(z.room_ids)
        stack = [z.room_ids[0]]
        seen = {z.room_ids[0]}
        while stack:
            cur = by_id[stack.pop()]
            for other in members - seen:
                if cur.overlaps(by_id[other]):
                    seen.add(other)
                    stack.append(other)
        if seen != members:
            raise FormatError(f"zone {z.id} rooms do not form a connected overlap graph")
