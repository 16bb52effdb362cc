"""Grid geometry primitives: angles, cell indexing, segment traversal, wall clearance.

All continuous coordinates are meters with the origin at the map's bottom-left
corner; cell (iy, ix) covers [ix*cs, (ix+1)*cs) x [iy*cs, (iy+1)*cs).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree

TWO_PI = 2.0 * math.pi

# Half-diagonal of a grid cell divided by cell size; bounds how far a point can
# be from its cell center (used for conservative clearance tests).
HALF_DIAG_FACTOR = math.sqrt(2.0) / 2.0


def wrap_angle(theta: float) -> float:
    """Wrap an angle into [0, 2*pi)."""
    t = math.fmod(theta, TWO_PI)
    return t + TWO_PI if t < 0.0 else t


def angle_diff(a: float, b: float) -> float:
    """Signed smallest difference a-b, in [-pi, pi]."""
    d = math.fmod(a - b, TWO_PI)
    if d > math.pi:
        d -= TWO_PI
    elif d < -math.pi:
        d += TWO_PI
    return d


def cell_of(p, cell_size: float) -> tuple[int, int]:
    """(iy, ix) of the cell containing point p."""
    return int(p[1] // cell_size), int(p[0] // cell_size)


def cell_center(iy: int, ix: int, cell_size: float) -> np.ndarray:
    return np.array([(ix + 0.5) * cell_size, (iy + 0.5) * cell_size])


def supercover_cells(p0, p1, cell_size: float):
    """All (iy, ix) cells the closed segment p0->p1 passes through, in order.

    Amanatides-Woo traversal; cells touched only at a corner may or may not be
    included depending on float rounding, which is acceptable for collision
    and occlusion queries on this grid.
    """
    x0, y0 = float(p0[0]), float(p0[1])
    x1, y1 = float(p1[0]), float(p1[1])
    ix = int(x0 // cell_size)
    iy = int(y0 // cell_size)
    ix1 = int(x1 // cell_size)
    iy1 = int(y1 // cell_size)
    cells = [(iy, ix)]
    dx = x1 - x0
    dy = y1 - y0
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    # Parametric distance to the next vertical / horizontal cell boundary.
    if dx != 0.0:
        nx = (ix + (1 if step_x > 0 else 0)) * cell_size
        t_max_x = (nx - x0) / dx
        t_dx = cell_size / abs(dx)
    else:
        t_max_x = math.inf
        t_dx = math.inf
    if dy != 0.0:
        ny = (iy + (1 if step_y > 0 else 0)) * cell_size
        t_max_y = (ny - y0) / dy
        t_dy = cell_size / abs(dy)
    else:
        t_max_y = math.inf
        t_dy = math.inf
    guard = abs(ix1 - ix) + abs(iy1 - iy) + 4
    while (ix != ix1 or iy != iy1) and guard > 0:
        if t_max_x <= t_max_y:
            ix += step_x
            t_max_x += t_dx
        else:
            iy += step_y
            t_max_y += t_dy
        cells.append((iy, ix))
        guard -= 1
    return cells


def segment_cell_intervals(p0, p1, cell_size: float):
    """Like supercover_cells but yields (iy, ix, t_enter, t_exit) with t in [0, 1]."""
    x0, y0 = float(p0[0]), float(p0[1])
    x1, y1 = float(p1[0]), float(p1[1])
    ix = int(x0 // cell_size)
    iy = int(y0 // cell_size)
    ix1 = int(x1 // cell_size)
    iy1 = int(y1 // cell_size)
    dx = x1 - x0
    dy = y1 - y0
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    if dx != 0.0:
        nx = (ix + (1 if step_x > 0 else 0)) * cell_size
        t_max_x = (nx - x0) / dx
        t_dx = cell_size / abs(dx)
    else:
        t_max_x = math.inf
        t_dx = math.inf
    if dy != 0.0:
        ny = (iy + (1 if step_y > 0 else 0)) * cell_size
        t_max_y = (ny - y0) / dy
        t_dy = cell_size / abs(dy)
    else:
        t_max_y = math.inf
        t_dy = math.inf
    out = []
    t_prev = 0.0
    guard = abs(ix1 - ix) + abs(iy1 - iy) + 4
    while guard > 0:
        if ix == ix1 and iy == iy1:
            out.append((iy, ix, t_prev, 1.0))
            break
        t_next = min(t_max_x, t_max_y, 1.0)
        out.append((iy, ix, t_prev, t_next))
        t_prev = t_next
        if t_max_x <= t_max_y:
            ix += step_x
            t_max_x += t_dx
        else:
            iy += step_y
            t_max_y += t_dy
        guard -= 1
    return out


class WallGeometry:
    """Cached wall-distance queries for one grid.

    Clearance of a point is the exact Euclidean distance to the nearest wall
    cell treated as a solid square. Threshold tests run against a supersampled
    distance-transform field and only fall back to exact KD-tree queries inside
    the field's error band.
    """

    SUBSAMPLE = 8  # clearance field resolution, subpixels per cell edge

    def __init__(self, cells: np.ndarray, cell_size: float):
        self.cell_size = cell_size
        self.cells = cells
        wy, wx = np.nonzero(cells)
        self._wall_lo = np.stack([wx * cell_size, wy * cell_size], axis=1)
        self._wall_hi = self._wall_lo + cell_size
        centers = self._wall_lo + 0.5 * cell_size
        self._tree = cKDTree(centers)
        self._half_diag = HALF_DIAG_FACTOR * cell_size
        # supersampled clearance field: distance between subpixel centers is
        # within one subpixel half-diagonal of the true wall-region distance
        from scipy import ndimage

        sub = self.SUBSAMPLE
        self._sub_size = cell_size / sub
        fine_free = np.repeat(np.repeat(cells == 0, sub, axis=0), sub, axis=1)
        self._sub_clear = ndimage.distance_transform_edt(fine_free, sampling=self._sub_size).astype(
            np.float64
        )
        self._half_sub_diag = HALF_DIAG_FACTOR * self._sub_size
        self._sub_band = 2.0 * self._half_sub_diag
        # subpixels whose stored value has been refined to the exact center
        # clearance, shrinking the uncertainty band to one half-diagonal
        self._sub_exact = np.zeros(self._sub_clear.shape, dtype=bool)
        ny, nx = cells.shape
        ys, xs = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
        cc = np.stack([(xs.ravel() + 0.5) * cell_size, (ys.ravel() + 0.5) * cell_size], axis=1)
        self.center_clearance = self.point_clearance(cc).reshape(ny, nx)

    def _exact_min_dist(self, points: np.ndarray, idx: np.ndarray) -> np.ndarray:
        lo = self._wall_lo[idx]          # (N, k, 2)
        hi = self._wall_hi[idx]
        p = points[:, None, :]
        d = np.maximum(np.maximum(lo - p, p - hi), 0.0)
        return np.sqrt((d * d).sum(axis=2)).min(axis=1)

    def point_clearance(self, points: np.ndarray) -> np.ndarray:
        """Exact distance from each point (N,2) to the wall region."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        k = min(12, self._tree.n)
        dist, idx = self._tree.query(points, k=k)
        if k == 1:
            dist = dist[:, None]
            idx = idx[:, None]
        out = self._exact_min_dist(points, idx)
        # The k-th center must lie beyond d1 + cell diagonal for the k-nearest
        # centers to be guaranteed to contain the region-nearest wall.
        unsure = dist[:, -1] < dist[:, 0] + 2.0 * self._half_diag
        for i in np.nonzero(unsure)[0]:
            r = out[i] + 2.0 * self._half_diag
            cand = self._tree.query_ball_point(points[i], r)
            if cand:
                out[i] = self._exact_min_dist(points[i : i + 1], np.array([cand]))[0]
        return out

    def clearance_at(self, p) -> float:
        return float(self.point_clearance(np.asarray(p, dtype=float)[None, :])[0])

    def points_clear(self, points: np.ndarray, margin: float) -> np.ndarray:
        """Boolean mask: clearance(p) >= margin; fast path via the clearance field."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        ny, nx = self._sub_clear.shape
        ixs = np.clip((points[:, 0] // self._sub_size).astype(int), 0, nx - 1)
        iys = np.clip((points[:, 1] // self._sub_size).astype(int), 0, ny - 1)
        cc = self._sub_clear[iys, ixs]
        ok = cc - self._sub_band >= margin
        bad = cc + self._sub_band < margin
        border = ~ok & ~bad
        if border.any():
            exact = self.point_clearance(points[border])
            ok[border] = exact >= margin
        return ok

    def _clearance_xy(self, x: float, y: float) -> float:
        """Exact clearance of one point, low-overhead path."""
        k = min(8, self._tree.n)
        dist, idx = self._tree.query((x, y), k=k)
        lo = self._wall_lo[idx]
        hi = self._wall_hi[idx]
        dx = np.maximum(np.maximum(lo[:, 0] - x, x - hi[:, 0]), 0.0)
        dy = np.maximum(np.maximum(lo[:, 1] - y, y - hi[:, 1]), 0.0)
        out = math.sqrt(float((dx * dx + dy * dy).min()))
        if float(dist[-1]) < float(dist[0]) + 2.0 * self._half_diag:
            cand = self._tree.query_ball_point((x, y), out + 2.0 * self._half_diag)
            if cand:
                out = float(self._exact_min_dist(np.array([[x, y]]), np.array([cand]))[0])
        return out

    def clear_scalar(self, x: float, y: float, margin: float) -> bool:
        """Scalar points_clear for hot loops; refines borderline subpixels lazily."""
        iy = int(y / self._sub_size)
        ix = int(x / self._sub_size)
        ny, nx = self._sub_clear.shape
        if not (0 <= iy < ny and 0 <= ix < nx):
            return False
        cc = self._sub_clear[iy, ix]
        band = self._half_sub_diag if self._sub_exact[iy, ix] else self._sub_band
        if cc - band >= margin:
            return True
        if cc + band < margin:
            return False
        if not self._sub_exact[iy, ix]:
            cc = self._clearance_xy((ix + 0.5) * self._sub_size, (iy + 0.5) * self._sub_size)
            self._sub_clear[iy, ix] = cc
            self._sub_exact[iy, ix] = True
            if cc - self._half_sub_diag >= margin:
                return True
            if cc + self._half_sub_diag < margin:
                return False
        return self._clearance_xy(x, y) >= margin
