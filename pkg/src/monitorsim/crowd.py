"""Human trajectory synthesis: Markov-chain room goals, log-normal dwell times,
shortest paths on the buffered grid, pure-pursuit execution.

Trajectories are generated before any simulation step and never react to
robots. Every recorded pose keeps at least `buffer_m` clearance from walls; the
executor zeroes speed rather than violate that, and integrates several control
substeps per recorded step for smooth tracking.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .config import CrowdConfig
from .errors import GenerationFailed
from .geometry import angle_diff, supercover_cells, wrap_angle
from .mapgen import FREE, GridWorld
from .pathing import PathRouter, astar_path  # noqa: F401  (astar_path is part of this module's surface)

_CROWD_STREAM = 202


@dataclass
class HumanPlan:
    human_id: int
    goal_sequence: list  # (room_id, dwell_s)
    positions: np.ndarray  # (T+1, 2)
    thetas: np.ndarray  # (T+1,)
    speeds: np.ndarray  # (T+1,)
    dwelling: np.ndarray | None = None  # (T+1,) per-step dwell-phase flag

    def state_at(self, t: int):
        return self.positions[t], float(self.thetas[t]), float(self.speeds[t])


def build_transition_matrix(world: GridWorld, skew=None) -> np.ndarray:
    """Row-stochastic room-goal matrix: uniform over all other rooms.

    skew=(zone_id, k) multiplies the columns of rooms in that zone by k and
    renormalizes each row; self-transitions stay zero.
    """
    n = len(world.rooms)
    if n < 2:
        raise ValueError("need at least 2 rooms for a goal transition matrix")
    m = np.full((n, n), 1.0 / (n - 1))
    np.fill_diagonal(m, 0.0)
    if skew is not None:
        zone_id, k = skew
        zone = next(z for z in world.zones if z.id == zone_id)
        cols = np.array([r.id in zone.room_ids for r in sorted(world.rooms, key=lambda r: r.id)])
        m[:, cols] *= k
        np.fill_diagonal(m, 0.0)
        m /= m.sum(axis=1, keepdims=True)
    return m


def sample_goal_sequence(matrix: np.ndarray, dwell, horizon_s: float, rng: np.random.Generator):
    """Alternating (room, dwell_s) entries; runs until summed dwell covers the horizon.

    Dwells are exp(N(mu, sigma)) clipped to [1, horizon_s]. Travel time is
    nonnegative, so requiring the dwell total alone to reach the horizon keeps
    the sequence long enough.
    """
    if horizon_s <= 0:
        raise ValueError("horizon_s must be positive")
    mu, sigma = dwell
    n = matrix.shape[0]
    room = int(rng.integers(0, n))
    seq = []
    total = 0.0
    while total < horizon_s:
        dwell_s = float(np.clip(math.exp(rng.normal(mu, sigma)), 1.0, horizon_s))
        seq.append((room, dwell_s))
        total += dwell_s
        room = int(rng.choice(n, p=matrix[room]))
    return seq


class PathTrack:
    """Polyline with arc-length projection, windowed for forward followers."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        self.pts = pts
        self.xs = pts[:, 0].tolist()
        self.ys = pts[:, 1].tolist()
        seg = np.diff(pts, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1]).tolist()
        cum = [0.0]
        for sl in self.seg_len:
            cum.append(cum[-1] + sl)
        self.cum = cum
        self.length = cum[-1]
        self.n_seg = len(self.seg_len)
        self._last_seg = 0

    def project(self, x: float, y: float) -> tuple:
        """(arc position, distance) of the closest polyline point near the cursor."""
        if self.n_seg == 0:
            return 0.0, math.hypot(self.xs[0] - x, self.ys[0] - y)
        lo = max(0, self._last_seg - 2)
        hi = min(self.n_seg, self._last_seg + 8)
        s, d, seg = self._project_range(x, y, lo, hi)
        # fall back to a full search if the window looks like a local trap
        if d > 2.0 and (lo > 0 or hi < self.n_seg):
            s2, d2, seg2 = self._project_range(x, y, 0, self.n_seg)
            if d2 < d - 1e-12:
                s, d, seg = s2, d2, seg2
        self._last_seg = seg
        return s, d

    def _project_range(self, x: float, y: float, lo: int, hi: int):
        xs, ys, seg_len, cum = self.xs, self.ys, self.seg_len, self.cum
        best_d2 = math.inf
        best_s = 0.0
        best_i = lo
        for i in range(lo, hi):
            ax, ay = xs[i], ys[i]
            bx, by = xs[i + 1], ys[i + 1]
            abx, aby = bx - ax, by - ay
            denom = abx * abx + aby * aby
            if denom > 0.0:
                t = ((x - ax) * abx + (y - ay) * aby) / denom
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
            else:
                t = 0.0
            px, py = ax + abx * t, ay + aby * t
            d2 = (px - x) * (px - x) + (py - y) * (py - y)
            if d2 < best_d2:
                best_d2 = d2
                best_s = cum[i] + seg_len[i] * t
                best_i = i
        return best_s, math.sqrt(best_d2), best_i

    def point_at(self, s: float) -> tuple:
        if self.n_seg == 0 or s <= 0.0:
            return self.xs[0], self.ys[0]
        if s >= self.length:
            return self.xs[-1], self.ys[-1]
        i = min(self._last_seg, self.n_seg - 1)
        cum = self.cum
        # s is near the cursor in both directions; walk to the right segment
        while i > 0 and s < cum[i]:
            i -= 1
        while i < self.n_seg - 1 and s > cum[i + 1]:
            i += 1
        r = (s - cum[i]) / self.seg_len[i] if self.seg_len[i] > 0 else 0.0
        return (
            self.xs[i] + (self.xs[i + 1] - self.xs[i]) * r,
            self.ys[i] + (self.ys[i + 1] - self.ys[i]) * r,
        )


def pure_pursuit_step(
    state,
    track: PathTrack,
    lookahead_m: float,
    v_target: float,
    dt: float,
    world: GridWorld,
    v_max: float,
    omega_max: float,
    min_clearance: float = 0.0,
    align_stop_rad: float | None = None,
):
    """One unicycle control step toward the track's lookahead point.

    Returns ((p, theta, v), arrived). Speed snaps to min(v_target, v_max); the
    position integrates the pre-update heading. A step that would cross a wall
    or drop below min_clearance keeps the position and zeroes the speed (the
    heading still turns toward the path). With align_stop_rad set, the
    executor holds position and turns in place while the bearing error exceeds
    it (keeps the tracked point near the path after sharp goal changes).
    """
    p, theta, v = state
    x, y = float(p[0]), float(p[1])
    s, _ = track.project(x, y)
    arrived = (
        s >= track.length - 1e-9
        and math.hypot(track.xs[-1] - x, track.ys[-1] - y) < world.cell_size_m
    )
    tx, ty = track.point_at(s + lookahead_m)
    dx, dy = tx - x, ty - y
    err = 0.0
    if abs(dx) + abs(dy) > 1e-12:
        desired = math.atan2(dy, dx)
        err = angle_diff(desired, theta)
        omega = max(-omega_max, min(omega_max, err / dt))
    else:
        omega = 0.0
    theta_new = wrap_angle(theta + omega * dt)
    if arrived:
        return (p, theta_new, 0.0), True
    if align_stop_rad is not None and abs(err) > align_stop_rad:
        return (p, theta_new, 0.0), False
    v_new = min(v_target, v_max)
    nx = x + v_new * dt * math.cos(theta)
    ny = y + v_new * dt * math.sin(theta)
    if not _move_ok(world, x, y, nx, ny, v_new * dt, min_clearance):
        return (p, theta_new, 0.0), False
    return (np.array([nx, ny]), theta_new, v_new), False


def _move_ok(world: GridWorld, x0, y0, x1, y1, step_len, min_clearance: float) -> bool:
    if not (0.0 <= x1 < world.width_m and 0.0 <= y1 < world.height_m):
        return False
    if min_clearance > 0.0 and step_len <= min_clearance:
        # both endpoints this far from walls cannot bracket a wall crossing
        return world.geometry.clear_scalar(x1, y1, min_clearance)
    for cell in supercover_cells((x0, y0), (x1, y1), world.cell_size_m):
        if not world.is_free_cell(*cell):
            return False
    if min_clearance > 0.0:
        return world.geometry.clear_scalar(x1, y1, min_clearance)
    return True


def _route(routers, a, b):
    from .errors import NoPath

    for router in routers[:-1]:
        try:
            return router.path_near(a, b)
        except NoPath:
            continue
    return routers[-1].path_near(a, b)


def _room_spawn_cells(world: GridWorld, room, buffer_m: float) -> np.ndarray:
    cs = world.cell_size_m
    mask = world.buffered_free_mask(buffer_m).copy()
    ix0, ix1 = int(round(room.x0 / cs)), int(round(room.x1 / cs))
    iy0, iy1 = int(round(room.y0 / cs)), int(round(room.y1 / cs))
    sub = np.zeros_like(mask)
    sub[iy0:iy1, ix0:ix1] = True
    ys, xs = np.nonzero(mask & sub)
    return np.stack([xs, ys], axis=1)


def synthesize_crowd(
    world: GridWorld,
    params: CrowdConfig,
    T: int,
    dt: float,
    seed: int,
    matrix: np.ndarray | None = None,
) -> list:
    """Generate params.n_humans collision-free plans of length T+1, deterministic in seed."""
    if T < 0:
        raise ValueError("T must be >= 0")
    if params.n_humans == 0:
        return []
    if matrix is None:
        skew = None
        if params.skew_zone is not None and params.skew_factor != 1.0:
            skew = (params.skew_zone, params.skew_factor)
        matrix = build_transition_matrix(world, skew)
    rng = np.random.default_rng([int(seed), _CROWD_STREAM])
    # Plan with some slack over the hard buffer so tracking oscillation stays
    # clear of the safety guard; fall back to the exact buffer where the
    # slack graph is disconnected.
    routers = [PathRouter(world, params.buffer_m + 0.2), PathRouter(world, params.buffer_m)]
    horizon_s = max(T, 1) * dt
    dwell = (params.dwell_mu_log_s, params.dwell_sigma_log)
    sub_dt = dt / params.substeps
    plans = []
    rooms_by_id = {r.id: r for r in world.rooms}
    for hid in range(params.n_humans):
        goals = sample_goal_sequence(matrix, dwell, horizon_s, rng)
        spawn_room = rooms_by_id[goals[0][0]]
        cells = _room_spawn_cells(world, spawn_room, params.buffer_m)
        if len(cells) == 0:
            raise GenerationFailed(f"room {spawn_room.id} has no buffer-respecting spawn cell")
        cx, cy = cells[int(rng.integers(0, len(cells)))]
        p = np.array([(cx + 0.5) * world.cell_size_m, (cy + 0.5) * world.cell_size_m])
        theta = float(rng.uniform(0.0, 2.0 * math.pi))
        v = 0.0
        positions = np.empty((T + 1, 2))
        thetas = np.empty(T + 1)
        speeds = np.empty(T + 1)
        dwelling = np.zeros(T + 1, dtype=bool)
        positions[0], thetas[0], speeds[0] = p, theta, v
        dwelling[0] = True

        goal_iter = iter(goals)
        room_id, dwell_s = next(goal_iter)
        mode = "dwell"
        dwell_left = max(1, int(round(dwell_s / dt)))
        track = None
        last_room = room_id
        for t in range(1, T + 1):
            if mode == "dwell":
                v = 0.0
                dwelling[t] = True
                dwell_left -= 1
                if dwell_left <= 0:
                    nxt = next(goal_iter, None)
                    if nxt is None:
                        # horizon outlived the sampled goals; keep walking the chain
                        nr = int(rng.choice(matrix.shape[0], p=matrix[last_room]))
                        nd = float(np.clip(math.exp(rng.normal(*dwell)), 1.0, horizon_s))
                        nxt = (nr, nd)
                    room_id, dwell_s = nxt
                    goal = rooms_by_id[room_id].centroid
                    track = PathTrack(_route(routers, p, goal))
                    last_room = room_id
                    mode = "travel"
            else:
                arrived = False
                for _ in range(params.substeps):
                    (p, theta, v), arrived = pure_pursuit_step(
                        (p, theta, v),
                        track,
                        params.lookahead_m,
                        params.v_max_mps,
                        sub_dt,
                        world,
                        params.v_max_mps,
                        params.omega_max_radps,
                        min_clearance=params.buffer_m,
                        align_stop_rad=math.pi / 4.0,
                    )
                    if arrived:
                        break
                if arrived:
                    mode = "dwell"
                    dwell_left = max(1, int(round(dwell_s / dt)))
                    v = 0.0
            positions[t], thetas[t], speeds[t] = p, theta, v
        plans.append(
            HumanPlan(
                human_id=hid,
                goal_sequence=goals,
                positions=positions,
                thetas=thetas,
                speeds=speeds,
                dwelling=dwelling,
            )
        )
    return plans


def save_crowd(plans, path):
    data = {
        "schema_version": 1,
        "humans": [
            {
                "id": pl.human_id,
                "goals": [[int(r), d] for r, d in pl.goal_sequence],
                "trajectory": [
                    [t, float(pl.positions[t, 0]), float(pl.positions[t, 1]), float(pl.thetas[t]), float(pl.speeds[t])]
                    for t in range(len(pl.positions))
                ],
            }
            for pl in plans
        ],
    }
    with open(path, "w") as fh:
        json.dump(data, fh)
        fh.write("\n")


def load_crowd(path):
    with open(path) as fh:
        data = json.load(fh)
    plans = []
    for h in data["humans"]:
        traj = np.asarray(h["trajectory"], dtype=float)
        plans.append(
            HumanPlan(
                human_id=int(h["id"]),
                goal_sequence=[(int(r), float(d)) for r, d in h["goals"]],
                positions=traj[:, 1:3].copy(),
                thetas=traj[:, 3].copy(),
                speeds=traj[:, 4].copy(),
            )
        )
    return plans
