"""Shortest paths on the buffered free-space grid.

`astar_path` is the single-query primitive (8-connected, octile heuristic).
`PathRouter` serves repeated queries to the same goal (room centroids, waypoint
goals) from cached Dijkstra fields over the identical graph, so routed paths
always have minimal cost.
"""

from __future__ import annotations

import heapq
import math

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import NoPath
from .mapgen import GridWorld

SQRT2 = math.sqrt(2.0)


def _passable_mask(world: GridWorld, buffer_m: float) -> np.ndarray:
    if buffer_m > 0.0:
        return world.buffered_free_mask(buffer_m)
    return world.cells == 0


def astar_path(world: GridWorld, a, b, buffer_m: float = 0.0):
    """Cheapest 8-connected cell-center path between the cells of a and b.

    Only cells whose center clearance is >= buffer_m are traversable; diagonal
    steps additionally require both adjacent orthogonal cells to be
    traversable. Raises NoPath when the endpoints are not connected.
    """
    mask = _passable_mask(world, buffer_m)
    cs = world.cell_size_m
    start = world.cell_of(a)
    goal = world.cell_of(b)
    for name, cell in (("start", start), ("goal", goal)):
        if not (0 <= cell[0] < world.height_cells and 0 <= cell[1] < world.width_cells) or not mask[cell]:
            raise NoPath(f"{name} cell {cell} is not buffer-respecting free space")
    if start == goal:
        return [np.array([(start[1] + 0.5) * cs, (start[0] + 0.5) * cs])]

    def heuristic(c):
        dy = abs(c[0] - goal[0])
        dx = abs(c[1] - goal[1])
        return cs * (max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy))

    ny, nx = mask.shape
    g = {start: 0.0}
    came = {}
    heap = [(heuristic(start), start)]
    closed = set()
    while heap:
        f, cur = heapq.heappop(heap)
        if cur == goal:
            break
        if cur in closed:
            continue
        closed.add(cur)
        cy, cx = cur
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                yn, xn = cy + dy, cx + dx
                if not (0 <= yn < ny and 0 <= xn < nx) or not mask[yn, xn]:
                    continue
                if dy != 0 and dx != 0 and not (mask[cy, xn] and mask[yn, cx]):
                    continue
                step = cs * SQRT2 if dy != 0 and dx != 0 else cs
                cand = g[cur] + step
                nxt = (yn, xn)
                if cand < g.get(nxt, math.inf) - 1e-12:
                    g[nxt] = cand
                    came[nxt] = cur
                    heapq.heappush(heap, (cand + heuristic(nxt), nxt))
    if goal not in g:
        raise NoPath(f"no buffer-respecting path from {start} to {goal}")
    cells = [goal]
    while cells[-1] != start:
        cells.append(came[cells[-1]])
    cells.reverse()
    return [np.array([(ix + 0.5) * cs, (iy + 0.5) * cs]) for iy, ix in cells]


def path_cost(path) -> float:
    pts = np.asarray(path)
    if len(pts) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


class PathRouter:
    """Cached shortest-path provider over one (world, buffer) grid graph."""

    def __init__(self, world: GridWorld, buffer_m: float):
        self.world = world
        self.buffer_m = buffer_m
        self.mask = _passable_mask(world, buffer_m)
        self._fields = {}
        self._node_tree = None
        self._build_graph()

    def _build_graph(self):
        mask = self.mask
        ny, nx = mask.shape
        cs = self.world.cell_size_m
        idx = np.full(mask.shape, -1, dtype=np.int32)
        ys, xs = np.nonzero(mask)
        n = len(ys)
        idx[ys, xs] = np.arange(n, dtype=np.int32)
        rows, cols, costs = [], [], []
        # orthogonal neighbors
        for dy, dx in ((0, 1), (1, 0)):
            src = mask[: ny - dy, : nx - dx] & mask[dy:, dx:]
            sy, sx = np.nonzero(src)
            rows.append(idx[sy, sx])
            cols.append(idx[sy + dy, sx + dx])
            costs.append(np.full(len(sy), cs))
        # diagonals, no corner cutting: the two orthogonal cells must be free too
        quad = mask[:-1, :-1] & mask[1:, 1:] & mask[:-1, 1:] & mask[1:, :-1]
        sy, sx = np.nonzero(quad)
        rows.append(idx[sy, sx])
        cols.append(idx[sy + 1, sx + 1])
        costs.append(np.full(len(sy), cs * SQRT2))
        rows.append(idx[sy, sx + 1])
        cols.append(idx[sy + 1, sx])
        costs.append(np.full(len(sy), cs * SQRT2))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        costs = np.concatenate(costs)
        # symmetric graph
        self.graph = csr_matrix(
            (np.concatenate([costs, costs]), (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
            shape=(n, n),
        )
        self.node_index = idx
        self.node_cells = np.stack([ys, xs], axis=1)

    def _node_of(self, p) -> int:
        cell = self.world.cell_of(p)
        if not (0 <= cell[0] < self.mask.shape[0] and 0 <= cell[1] < self.mask.shape[1]):
            raise NoPath(f"point {tuple(np.round(p, 3))} outside map")
        node = self.node_index[cell]
        if node < 0:
            raise NoPath(f"cell {cell} is not buffer-respecting free space")
        return int(node)

    def _node_near(self, p, snap_radius_m: float = 3.0) -> int:
        """Node of p's cell, or the nearest routable cell within snap_radius_m."""
        cell = self.world.cell_of(p)
        if (
            0 <= cell[0] < self.mask.shape[0]
            and 0 <= cell[1] < self.mask.shape[1]
            and self.node_index[cell] >= 0
        ):
            return int(self.node_index[cell])
        if self._node_tree is None:
            from scipy.spatial import cKDTree

            cs = self.world.cell_size_m
            centers = (self.node_cells[:, ::-1] + 0.5) * cs
            self._node_tree = cKDTree(centers)
        d, i = self._node_tree.query(np.asarray(p, dtype=float))
        if d > snap_radius_m:
            raise NoPath(f"no routable cell within {snap_radius_m} m of {tuple(np.round(p, 3))}")
        return int(i)

    def path_near(self, a, b):
        """Like path() but snaps endpoints to the nearest routable cell."""
        return self._path_nodes(self._node_near(a), self._node_near(b))

    def _field(self, node: int) -> tuple:
        if node not in self._fields:
            dist, pred = dijkstra(self.graph, indices=node, return_predecessors=True)
            self._fields[node] = (dist, pred)
        return self._fields[node]

    def field_to(self, goal) -> tuple:
        return self._field(self._node_of(goal))

    def distance(self, a, b) -> float:
        dist, _ = self.field_to(b)
        d = dist[self._node_of(a)]
        if not np.isfinite(d):
            raise NoPath("endpoints not connected in buffered free space")
        return float(d)

    def path(self, a, b):
        """Minimal-cost cell-center path a -> b (same costs as astar_path)."""
        return self._path_nodes(self._node_of(a), self._node_of(b))

    def _path_nodes(self, start_node: int, goal_node: int):
        dist, pred = self._field(goal_node)
        if not np.isfinite(dist[start_node]):
            raise NoPath("endpoints not connected in buffered free space")
        cs = self.world.cell_size_m
        chain = [start_node]
        while chain[-1] != goal_node:
            chain.append(int(pred[chain[-1]]))
        return [
            np.array([(self.node_cells[n][1] + 0.5) * cs, (self.node_cells[n][0] + 0.5) * cs])
            for n in chain
        ]
