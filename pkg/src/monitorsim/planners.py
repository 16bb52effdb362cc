"""Learning-free baselines: greedy fixed-camera placement, waypoint sampling,
spanning-tree multi-robot coverage loops, and LP speed plans for persistent
monitoring. All mobile planners are human-blind: they see robot states and the
map, never observations of humans.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from .config import PlannerConfig, RunConfig, SPEED_COMMANDS, TURN_COMMANDS
from .crowd import PathTrack
from .env import ActionCommand
from .errors import Infeasible, NoCandidates
from .geometry import angle_diff, supercover_cells
from .mapgen import GridWorld
from .pathing import PathRouter
from .sensing import SensorSpec, visible_free_cells

log = logging.getLogger(__name__)

# Goal-reached tolerance for pursuit toward an open path's endpoint.
ARRIVAL_TOL_M = 1.0


# ---------------------------------------------------------------------------
# fixed cameras
# ---------------------------------------------------------------------------


def default_camera_candidates(world: GridWorld, n_orientations: int = 8):
    """Room centroids crossed with evenly spaced orientations."""
    out = []
    for room in sorted(world.rooms, key=lambda r: r.id):
        c = room.centroid
        for k in range(n_orientations):
            out.append((c.copy(), 2.0 * math.pi * k / n_orientations))
    return out


def fc_place(world: GridWorld, n_cams: int, spec: SensorSpec, candidates=None):
    """Greedy max-new-coverage placement of n_cams fixed sensors.

    Coverage of a pose is the set of free cells visible from it; ties go to
    the lowest candidate index. Returns a list of (p, theta) poses.
    """
    if candidates is None:
        candidates = default_camera_candidates(world)
    if not candidates:
        raise NoCandidates("camera candidate set is empty")
    cover = [frozenset(visible_free_cells(c, world, spec).tolist()) for c in candidates]
    covered = set()
    placed = []
    gains = []
    for _ in range(n_cams):
        best_i = 0
        best_gain = -1
        for i, cov in enumerate(cover):
            gain = len(cov - covered)
            if gain > best_gain:
                best_gain = gain
                best_i = i
        placed.append(candidates[best_i])
        gains.append(best_gain)
        covered |= cover[best_i]
    return placed, gains


# ---------------------------------------------------------------------------
# discrete-action pure pursuit
# ---------------------------------------------------------------------------


def snap_speed(v: float) -> float:
    """Nearest command speed, ties rounding down."""
    best = SPEED_COMMANDS[0]
    best_d = abs(v - best)
    for c in SPEED_COMMANDS[1:]:
        d = abs(v - c)
        if d < best_d - 1e-12:
            best, best_d = c, d
    return best


def snap_turn(omega: float) -> float:
    """Nearest command turn rate, ties toward zero."""
    best = 0.0
    best_d = abs(omega)
    for c in TURN_COMMANDS:
        d = abs(omega - c)
        if d < best_d - 1e-12:
            best, best_d = c, d
    return best


def scheduled_speed(
    err_abs: float, dist_to_target: float, v_pref: float, pivot_threshold: float = math.pi / 8.0
) -> float:
    """Speed schedule for the discrete turn set: pivot in place when badly
    misaligned or when close to a target but not pointed at it (the minimum
    turning radius at any nonzero command speed exceeds typical goal
    distances, so driving while turning would orbit the target forever)."""
    if err_abs > math.pi / 2.0:
        return 0.0
    if dist_to_target < 3.0 and err_abs > pivot_threshold + 1e-9:
        return 0.0
    if err_abs > math.pi / 6.0:
        return min(v_pref, 1.0)
    return v_pref


# Waypoints count as visited within this radius.
CONSUME_TOL_M = 1.5
# A near miss this close still counts once the next waypoint is nearer.
FORGIVE_TOL_M = 2.0
# Bends sharper than this are treated as corners (exact approach + pivot).
CORNER_BEND_RAD = math.pi / 6.0


def path_bends(waypoints: np.ndarray, cyclic: bool) -> np.ndarray:
    """Turn angle at each waypoint; open-path endpoints count as corners."""
    n = len(waypoints)
    out = np.zeros(n)
    for k in range(n):
        if not cyclic and (k == 0 or k == n - 1):
            out[k] = math.pi  # endpoints demand an exact approach
            continue
        a = waypoints[(k - 1) % n]
        b = waypoints[k]
        c = waypoints[(k + 1) % n]
        v1 = b - a
        v2 = c - b
        if np.linalg.norm(v1) < 1e-9 or np.linalg.norm(v2) < 1e-9:
            continue
        out[k] = abs(angle_diff(math.atan2(v2[1], v2[0]), math.atan2(v1[1], v1[0])))
    return out


class WaypointFollower:
    """Index-based follower for open paths and closed loops.

    Forward-only waypoint consumption is immune to the projection flips plain
    pure pursuit suffers on self-adjacent coverage lanes; the aim point sits a
    lookahead ahead of the cursor but never beyond a corner, and corners (or
    path endpoints) are approached exactly with an in-place pivot.
    """

    def __init__(self, world, waypoints, cyclic: bool, speeds=None, lookahead_m: float = 2.0):
        self.world = world
        self.wp = np.asarray(waypoints, dtype=float).reshape(-1, 2)
        self.n = len(self.wp)
        self.cyclic = cyclic
        self.bends = path_bends(self.wp, cyclic)
        self.speeds = None if speeds is None else np.asarray(speeds, dtype=float)
        self.lookahead = lookahead_m
        self.k = 0
        self.done = self.n == 0

    def _los(self, x: float, y: float, q) -> bool:
        for cell in supercover_cells((x, y), (q[0], q[1]), self.world.cell_size_m):
            if not self.world.is_free_cell(*cell):
                return False
        return True

    def start_at_nearest(self, p):
        d = np.hypot(self.wp[:, 0] - p[0], self.wp[:, 1] - p[1])
        self.k = int(np.argmin(d))

    def _advance(self, x: float, y: float):
        guard = self.n + 1
        while guard > 0 and not self.done:
            d = math.hypot(self.wp[self.k][0] - x, self.wp[self.k][1] - y)
            if d >= FORGIVE_TOL_M:
                break
            if not self.cyclic and self.k == self.n - 1:
                if d < CONSUME_TOL_M and self._los(x, y, self.wp[self.k]):
                    self._step_index()
                break
            # advancing retargets to the next waypoint, so that one must be
            # in line of sight or a detour around a wall would be skipped
            nxt = (self.k + 1) % self.n
            if not self._los(x, y, self.wp[nxt]):
                break
            if d < CONSUME_TOL_M:
                self._step_index()
            elif math.hypot(self.wp[nxt][0] - x, self.wp[nxt][1] - y) < d:
                self._step_index()
            else:
                break
            guard -= 1

    def _step_index(self):
        if self.cyclic:
            self.k = (self.k + 1) % self.n
        else:
            self.k += 1
            if self.k >= self.n:
                self.k = self.n - 1
                self.done = True

    def _aim(self, x: float, y: float):
        """(aim point, its arc distance lower bound, aim-is-corner)."""
        j = self.k
        arc = math.hypot(self.wp[j][0] - x, self.wp[j][1] - y)
        while arc < self.lookahead and self.bends[j] <= CORNER_BEND_RAD:
            if not self.cyclic and j == self.n - 1:
                break
            j2 = (j + 1) % self.n
            if not self._los(x, y, self.wp[j2]):
                break
            arc += math.hypot(self.wp[j2][0] - self.wp[j][0], self.wp[j2][1] - self.wp[j][1])
            j = j2
        corner = self.bends[j] > CORNER_BEND_RAD or (not self.cyclic and j == self.n - 1)
        return self.wp[j], arc, corner

    def command(self, robot, dt: float, v_pref: float = None):
        """Discrete action following the path; returns (ActionCommand, done)."""
        x, y = float(robot.p[0]), float(robot.p[1])
        self._advance(x, y)
        if self.done:
            return ActionCommand(0.0, 0.0), True
        aim, arc, corner = self._aim(x, y)
        dist_aim = math.hypot(aim[0] - x, aim[1] - y)
        desired = math.atan2(aim[1] - y, aim[0] - x)
        err = angle_diff(desired, robot.theta)
        delta = snap_turn(err / dt)
        if v_pref is None:
            v_pref = 2.0
        if self.speeds is not None:
            v_pref = min(v_pref, float(self.speeds[(self.k - 1) % self.n]))
        err_abs = abs(err)
        if corner and dist_aim < 3.0:
            v_pref = min(v_pref, 1.0)
        if err_abs > math.pi / 3.0:
            v = 0.0
        elif corner and dist_aim < 2.4 and err_abs > math.pi / 8.0 + 1e-9:
            v = 0.0
        elif err_abs > math.pi / 6.0:
            v = min(v_pref, 1.0)
        else:
            v = v_pref
        v = snap_speed(v)
        # degrade speed, then steering, until the predicted motion stays out
        # of walls; an aligned-but-blocked robot must keep turning, or it
        # would freeze in front of the obstacle forever
        side = math.pi / 8.0 if err >= 0.0 else -math.pi / 8.0
        candidates = [(v, delta), (min(v, 1.0), delta), (v, side), (min(v, 1.0), side), (1.0, -side)]
        chosen = None
        for v_try, d_try in candidates:
            if self._action_safe(robot, v_try, d_try, dt):
                chosen = (v_try, d_try)
                break
        if chosen is None:
            chosen = (0.0, side)
        if chosen[0] == 0.0 and chosen[1] == 0.0:
            chosen = (0.0, side)
        return ActionCommand(*chosen), False

    def _action_safe(self, robot, v_cmd: float, delta: float, dt: float, a_max: float = 1.0) -> bool:
        """Would this command keep the next two motion segments wall-free
        (assuming a full brake afterwards)? The current step's motion is
        already fixed by the previous state and is not checked."""
        x, y = float(robot.p[0]), float(robot.p[1])
        th = robot.theta
        v = robot.v
        # step already in flight
        x1 = x + v * math.cos(th) * dt
        y1 = y + v * math.sin(th) * dt
        th1 = th + delta * dt
        v1 = v + max(-a_max * dt, min(a_max * dt, v_cmd - v))
        x2 = x1 + v1 * math.cos(th1) * dt
        y2 = y1 + v1 * math.sin(th1) * dt
        if v1 > 0.0 and not self._los(x1, y1, (x2, y2)):
            return False
        return True


def pursuit_command(robot, track, lookahead: float, dt: float, v_pref: float, world=None):
    """Single-shot follower step for a PathTrack (compat wrapper over
    WaypointFollower state kept by the caller is preferred)."""
    follower = WaypointFollower(world, np.asarray(track.pts), cyclic=False, lookahead_m=lookahead)
    follower.start_at_nearest(robot.p)
    cmd, done = follower.command(robot, dt, v_pref)
    return cmd, done


# ---------------------------------------------------------------------------
# planners
# ---------------------------------------------------------------------------


class StuckMonitor:
    """Flags robots that have made no spatial progress for a while.

    In-place pivots are at most 8 steps (a half turn at the maximum command
    rate), so a longer stall means the follower is wedged and needs a reroute.
    """

    STALL_STEPS = 10

    def __init__(self, n: int):
        self.last_p = [None] * n
        self.count = [0] * n

    def update(self, i: int, p) -> bool:
        moved = self.last_p[i] is None or abs(p[0] - self.last_p[i][0]) + abs(p[1] - self.last_p[i][1]) > 1e-9
        if moved:
            self.count[i] = 0
        else:
            self.count[i] += 1
        self.last_p[i] = (float(p[0]), float(p[1]))
        if self.count[i] >= self.STALL_STEPS:
            self.count[i] = 0
            return True
        return False

    def commanded(self, i: int, cmd: ActionCommand):
        pass


class StationaryPlanner:
    """Commands zero speed and zero turn; used when only fixed sensors act."""

    kind = "fc"

    def __init__(self, cfg: RunConfig):
        pass

    def reset(self, world, robots, rng):
        pass

    def act(self, robots):
        return [ActionCommand(0.0, 0.0) for _ in robots]


class WaypointPlanner:
    """Independent random goal sampling with shortest-path following."""

    kind = "ws"

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg

    def reset(self, world, robots, rng):
        self.world = world
        self.rng = rng
        self.router = PathRouter(world, self.cfg.crowd.buffer_m)
        ys, xs = np.nonzero(self.router.mask)
        cs = world.cell_size_m
        self.goal_cells = np.stack([(xs + 0.5) * cs, (ys + 0.5) * cs], axis=1)
        self.followers = [None] * len(robots)
        self._stuck = StuckMonitor(len(robots))

    def _new_follower(self, i, p, goal=None):
        if goal is None:
            goal = self.goal_cells[int(self.rng.integers(0, len(self.goal_cells)))]
        self.goals_last = goal
        path = self.router.path_near(p, goal)
        self.followers[i] = WaypointFollower(self.world, path, cyclic=False, lookahead_m=self.cfg.robots.lookahead_m)

    def act(self, robots):
        out = []
        for i, robot in enumerate(robots):
            if self.followers[i] is None:
                self._new_follower(i, robot.p)
            if self._stuck.update(i, robot.p):
                # collision-stopped repeatedly: reroute to the same goal and pivot
                end = self.followers[i].wp[-1]
                self._new_follower(i, robot.p, end)
                cmd = ActionCommand(0.0, math.pi / 8.0)
                self._stuck.commanded(i, cmd)
                out.append(cmd)
                continue
            cmd, done = self.followers[i].command(robot, self.cfg.dt_s, self.cfg.robots.v_max_mps)
            if done:
                self._new_follower(i, robot.p)
                cmd, _ = self.followers[i].command(robot, self.cfg.dt_s, self.cfg.robots.v_max_mps)
            self._stuck.commanded(i, cmd)
            out.append(cmd)
        return out


@dataclass
class CoverageLoop:
    waypoints: np.ndarray  # (N, 2); closed: last connects back to first
    robot: int = -1
    coverage_gap_cells: int = 0

    @property
    def segment_lengths(self) -> np.ndarray:
        closed = np.vstack([self.waypoints, self.waypoints[:1]])
        d = np.diff(closed, axis=0)
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def length_m(self) -> float:
        return float(self.segment_lengths.sum())


def _subcell_positions(I: int, J: int, pitch: float):
    x0 = J * pitch
    y0 = I * pitch
    q = pitch / 4.0
    return {
        "sw": (x0 + q, y0 + q),
        "se": (x0 + 3 * q, y0 + q),
        "ne": (x0 + 3 * q, y0 + 3 * q),
        "nw": (x0 + q, y0 + 3 * q),
    }


def _stc_cycle(component, tree_edges, pitch: float):
    """Subcell circumnavigation of a spanning tree: one closed cycle visiting
    each included subcell exactly once."""
    ring = [("sw", "se"), ("se", "ne"), ("ne", "nw"), ("nw", "sw")]
    side_of = {(0, 1): ("se", "ne"), (0, -1): ("nw", "sw"), (1, 0): ("ne", "nw"), (-1, 0): ("sw", "se")}
    cross = {
        (0, 1): (("se", "sw"), ("ne", "nw")),
        (1, 0): (("ne", "se"), ("nw", "sw")),
    }
    adj = {}

    def add(u, v):
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)

    def remove(u, v):
        adj[u].remove(v)
        adj[v].remove(u)

    for cell in component:
        for a, b in ring:
            add((cell, a), (cell, b))
    for (a_cell, b_cell) in tree_edges:
        d = (b_cell[0] - a_cell[0], b_cell[1] - a_cell[1])
        if d not in cross:
            a_cell, b_cell = b_cell, a_cell
            d = (-d[0], -d[1])
        sa = side_of[d]
        sb = side_of[(-d[0], -d[1])]
        remove((a_cell, sa[0]), (a_cell, sa[1]))
        remove((b_cell, sb[0]), (b_cell, sb[1]))
        for qa, qb in cross[d]:
            add((a_cell, qa), (b_cell, qb))
    # walk the 2-regular graph
    start = (min(component), "sw")
    cycle = [start]
    prev = None
    cur = start
    while True:
        nxts = adj[cur]
        nxt = nxts[0] if nxts[0] != prev else nxts[1]
        if nxt == start:
            break
        cycle.append(nxt)
        prev, cur = cur, nxt
    return [
        _subcell_positions(cell[0], cell[1], pitch)[corner] for cell, corner in cycle
    ]


def _segment_clear(world: GridWorld, a, b) -> bool:
    for cell in supercover_cells(a, b, world.cell_size_m):
        if not world.is_free_cell(*cell):
            return False
    return True


def _stitch(world: GridWorld, router: PathRouter, pts):
    """Replace wall-crossing segments of a closed point sequence with routed paths."""
    out = []
    n = len(pts)
    for i in range(n):
        a = pts[i]
        b = pts[(i + 1) % n]
        out.append(np.asarray(a, dtype=float))
        if not _segment_clear(world, a, b):
            detour = router.path_near(a, b)
            out.extend(np.asarray(q, dtype=float) for q in detour)
    # drop consecutive duplicates
    dedup = [out[0]]
    for q in out[1:]:
        if np.linalg.norm(q - dedup[-1]) > 1e-9:
            dedup.append(q)
    if len(dedup) > 1 and np.linalg.norm(dedup[0] - dedup[-1]) < 1e-9:
        dedup.pop()
    return dedup


def mcpp_plan(world: GridWorld, n_robots: int, spec: SensorSpec, pitch_m: float = 4.0, buffer_m: float = 0.5):
    """Spanning-tree coverage loops, one per robot, balanced by length.

    Coarse cells (pitch_m) whose four subcell centers all have buffer_m wall
    clearance enter per-component spanning trees; their circumnavigations are
    merged through shortest free-space paths into one grand cycle, split into
    contiguous arcs, and each arc is closed through free space.
    """
    if n_robots < 1:
        raise ValueError("n_robots must be >= 1")
    cache = getattr(world, "_mcpp_cache", None)
    if cache is None:
        cache = world._mcpp_cache = {}
    key = (n_robots, round(pitch_m, 6), round(buffer_m, 6), round(spec.range_m, 6))
    if key in cache:
        return cache[key]

    geom = world.geometry
    nI = int(world.height_m // pitch_m)
    nJ = int(world.width_m // pitch_m)
    cells = []
    for I in range(nI):
        for J in range(nJ):
            pos = _subcell_positions(I, J, pitch_m)
            pts = np.array(list(pos.values()))
            if geom.points_clear(pts, buffer_m).all():
                cells.append((I, J))
    if not cells:
        raise NoCandidates("no coarse cell fits the coverage lattice; map too tight")
    cell_set = set(cells)
    # connected components over 4-adjacency
    comps = []
    unseen = set(cells)
    while unseen:
        root = min(unseen)
        comp = [root]
        unseen.remove(root)
        stack = [root]
        while stack:
            I, J = stack.pop()
            for d in ((0, 1), (0, -1), (1, 0), (-1, 0)):
                nb = (I + d[0], J + d[1])
                if nb in unseen:
                    unseen.remove(nb)
                    comp.append(nb)
                    stack.append(nb)
        comps.append(sorted(comp))
    comps.sort(key=lambda c: (-len(c), c[0]))

    router = PathRouter(world, buffer_m)
    cycles = []
    for comp in comps:
        comp_set = set(comp)
        tree = []
        seen = {comp[0]}
        stack = [comp[0]]
        while stack:
            cur = stack.pop()
            for d in ((0, 1), (1, 0), (0, -1), (-1, 0)):
                nb = (cur[0] + d[0], cur[1] + d[1])
                if nb in comp_set and nb not in seen:
                    seen.add(nb)
                    tree.append((cur, nb))
                    stack.append(nb)
        cycles.append([np.asarray(p, dtype=float) for p in _stc_cycle(comp, tree, pitch_m)])

    # merge component cycles through free-space bridges
    grand = cycles[0]
    remaining = cycles[1:]
    while remaining:
        ga = np.asarray(grand)
        best = (math.inf, 0, 0, 0)
        for ci, cyc in enumerate(remaining):
            cb = np.asarray(cyc)
            d2 = ((ga[:, None, :] - cb[None, :, :]) ** 2).sum(axis=2)
            ai, bi = np.unravel_index(int(np.argmin(d2)), d2.shape)
            if d2[ai, bi] < best[0]:
                best = (d2[ai, bi], ci, int(ai), int(bi))
        _, ci, ai, bi = best
        cyc = remaining.pop(ci)
        bridge_out = router.path_near(grand[ai], cyc[bi])
        bridge_back = router.path_near(cyc[bi], grand[ai])
        rotated = cyc[bi:] + cyc[:bi]
        grand = grand[: ai + 1] + bridge_out + rotated + [rotated[0]] + bridge_back + grand[ai + 1 :]

    grand = _stitch(world, router, grand)

    # split into length-balanced contiguous arcs
    pts = np.asarray(grand)
    closed = np.vstack([pts, pts[:1]])
    seglen = np.hypot(*(np.diff(closed, axis=0).T))
    total = seglen.sum()
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    loops = []
    n_pts = len(pts)
    if n_robots == 1:
        loops.append(CoverageLoop(waypoints=pts.copy(), robot=0))
    else:
        cuts = [int(np.searchsorted(cum, total * k / n_robots)) for k in range(n_robots)]
        cuts = sorted(set(min(c, n_pts - 1) for c in cuts))
        while len(cuts) < n_robots:  # degenerate: duplicate cuts on tiny cycles
            for i in range(n_pts):
                if i not in cuts:
                    cuts.append(i)
                    break
            cuts = sorted(cuts)
        for k in range(len(cuts)):
            a = cuts[k]
            b = cuts[(k + 1) % len(cuts)]
            arc = list(range(a, b)) if a < b else list(range(a, n_pts)) + list(range(0, b))
            arc_pts = [pts[i] for i in arc]
            closing = router.path_near(arc_pts[-1], arc_pts[0])
            wp = arc_pts + [np.asarray(q) for q in closing[1:-1]]
            loop_pts = _stitch(world, router, wp)
            loops.append(CoverageLoop(waypoints=np.asarray(loop_pts), robot=k))

    # coverage audit
    centers = world.free_cell_centers()
    allpts = np.vstack([lp.waypoints for lp in loops])
    tree = cKDTree(allpts)
    d, _ = tree.query(centers)
    gap = int((d > spec.range_m).sum())
    for lp in loops:
        lp.coverage_gap_cells = gap
    if gap:
        log.warning(
            "coverage gap: %d free cells farther than %.1f m from every loop point", gap, spec.range_m
        )
    cache[key] = loops
    return loops


def segment_turn_angles(loop: CoverageLoop) -> np.ndarray:
    """Turn angle at the far end of each loop segment."""
    pts = loop.waypoints
    n = len(pts)
    out = np.zeros(n)
    for k in range(n):
        a = pts[k]
        b = pts[(k + 1) % n]
        c = pts[(k + 2) % n]
        v1 = b - a
        v2 = c - b
        if np.linalg.norm(v1) < 1e-9 or np.linalg.norm(v2) < 1e-9:
            continue
        out[k] = abs(angle_diff(math.atan2(v2[1], v2[0]), math.atan2(v1[1], v1[0])))
    return out


def turn_aware_caps(loop: CoverageLoop, v_max: float, pcfg: PlannerConfig) -> np.ndarray:
    """Per-segment speed caps from the turn angle at each segment's far end."""
    angles = segment_turn_angles(loop)
    caps = np.where(angles <= pcfg.pm_turn_full_rad + 1e-9, v_max, min(v_max, pcfg.pm_speed_turn_mps))
    return caps


def rotation_overhead_s(loop: CoverageLoop, omega_max: float = math.pi / 8.0) -> float:
    """Time the discrete controller spends pivoting at loop corners per lap.

    The command set cannot turn faster than omega_max per step, so any bend
    beyond it forces an in-place rotation plus roughly a step of lost
    acceleration; the certified period adds this known overhead to the LP's
    traversal time.
    """
    angles = segment_turn_angles(loop)
    total = 0.0
    for ang in angles:
        if ang > CORNER_BEND_RAD:
            total += (ang - omega_max) / omega_max + 1.5
    return total


def pm_speeds(loops, v_max: float, speed_caps=None, latency_constraints=None):
    """Per-segment traversal speeds minimizing each loop's period.

    Linear program over w_k = 1/s_k: minimize sum(len_k * w_k) subject to
    w_k >= 1/min(cap_k, v_max) and, for each latency constraint (segments R,
    L_R), time spent outside R <= L_R. Returns [(speeds, period_s), ...].
    """
    if not loops:
        raise ValueError("loops must be nonempty")
    out = []
    for li, loop in enumerate(loops):
        lengths = loop.segment_lengths
        n = len(lengths)
        caps = np.full(n, v_max)
        if speed_caps is not None and speed_caps[li] is not None:
            caps = np.minimum(caps, np.asarray(speed_caps[li], dtype=float))
        if (caps <= 0).any():
            raise Infeasible("speed caps must be positive")
        lb = 1.0 / caps
        a_ub = []
        b_ub = []
        if latency_constraints is not None and latency_constraints[li]:
            for segs, max_latency in latency_constraints[li]:
                row = lengths.copy()
                row[list(segs)] = 0.0
                a_ub.append(row)
                b_ub.append(max_latency)
        res = linprog(
            c=lengths,
            A_ub=np.asarray(a_ub) if a_ub else None,
            b_ub=np.asarray(b_ub) if b_ub else None,
            bounds=[(float(l), None) for l in lb],
            method="highs",
        )
        if not res.success:
            raise Infeasible(f"loop {li}: no feasible speed plan ({res.message})")
        w = res.x
        # snap to exact bounds where the solver sits on them
        at_bound = np.abs(w - lb) <= 1e-9 * np.maximum(1.0, lb)
        w = np.where(at_bound, lb, w)
        speeds = 1.0 / w
        period = float((lengths * w).sum())
        out.append((speeds, period))
    return out


# Loop waypoints count as reached within this radius; the follower then
# chases the next one. Must stay below the 2 m coverage-lane spacing (or the
# follower would swallow the parallel lane) but loose enough that the coarse
# heading quantization rarely misses a waypoint and forces a turnaround.
CARROT_TOL_M = 1.8

# Bends sharper than this force an exact corner approach (pivot precision).
CORNER_BEND_RAD = math.pi / 6.0


class LoopPlanner:
    """Drives each robot onto its coverage loop, then around it forever.

    MCPP chases waypoints at full speed; PM at the LP speed of the current
    segment (with turn-aware caps so the certified period reflects what the
    discrete controller can actually fly).
    """

    def __init__(self, cfg: RunConfig, use_lp_speeds: bool):
        self.cfg = cfg
        self.use_lp = use_lp_speeds
        self.kind = "pm" if use_lp_speeds else "mcpp"

    def reset(self, world, robots, rng):
        cfg = self.cfg
        self.world = world
        spec = SensorSpec(cfg.sensors.tracking_range_m, cfg.sensors.tracking_fov_rad, cfg.sensors.k_samples)
        self.loops = mcpp_plan(world, max(1, len(robots)), spec, cfg.planner_cfg.mcpp_pitch_m, cfg.crowd.buffer_m)
        self.router = PathRouter(world, cfg.crowd.buffer_m)
        if self.use_lp:
            caps = [turn_aware_caps(lp, cfg.robots.v_max_mps, cfg.planner_cfg) for lp in self.loops]
            plans = pm_speeds(self.loops, cfg.robots.v_max_mps, speed_caps=caps)
            self.speeds = [p[0] for p in plans]
            self.periods = [
                p[1] + rotation_overhead_s(lp) for p, lp in zip(plans, self.loops)
            ]
        else:
            self.speeds = [None] * len(self.loops)
            self.periods = [
                lp.length_m / cfg.robots.v_max_mps + rotation_overhead_s(lp) for lp in self.loops
            ]
        self.followers = [None] * len(robots)
        self.loop_mode = [False] * len(robots)
        self._stuck = StuckMonitor(len(robots))
        for i, robot in enumerate(robots):
            self._start_approach(i, robot.p)

    def _loop_follower(self, i):
        li = i % len(self.loops)
        return WaypointFollower(
            self.world,
            self.loops[li].waypoints,
            cyclic=True,
            speeds=self.speeds[li],
            lookahead_m=self.cfg.robots.lookahead_m,
        )

    def _start_approach(self, i, p, target=None):
        li = i % len(self.loops)
        wp = self.loops[li].waypoints
        if target is None:
            d = np.hypot(wp[:, 0] - p[0], wp[:, 1] - p[1])
            target = wp[int(np.argmin(d))]
        path = self.router.path_near(p, target)
        self.followers[i] = WaypointFollower(self.world, path, cyclic=False, lookahead_m=self.cfg.robots.lookahead_m)
        self.loop_mode[i] = False

    def act(self, robots):
        cfg = self.cfg
        out = []
        for i, robot in enumerate(robots):
            if self._stuck.update(i, robot.p):
                # reroute to the current target through free space and pivot
                f = self.followers[i]
                target = f.wp[f.k] if self.loop_mode[i] else f.wp[-1]
                self._start_approach(i, robot.p, target)
                cmd = ActionCommand(0.0, math.pi / 8.0)
                self._stuck.commanded(i, cmd)
                out.append(cmd)
                continue
            cmd, done = self.followers[i].command(robot, cfg.dt_s, cfg.robots.v_max_mps)
            if done and not self.loop_mode[i]:
                self.followers[i] = self._loop_follower(i)
                self.followers[i].start_at_nearest(robot.p)
                self.loop_mode[i] = True
                cmd, _ = self.followers[i].command(robot, cfg.dt_s, cfg.robots.v_max_mps)
            self._stuck.commanded(i, cmd)
            out.append(cmd)
        return out


def loop_follow_act(world, loops, speed_plans, robots, cfg: RunConfig, followers=None):
    """One-shot command computation for robots already assigned to loops.

    Returns (commands, followers); pass the followers back in on the next
    step to keep forward progress.
    """
    if followers is None:
        followers = []
        for i, robot in enumerate(robots):
            li = i % len(loops)
            f = WaypointFollower(
                world,
                loops[li].waypoints,
                cyclic=True,
                speeds=np.asarray(speed_plans[li][0]),
                lookahead_m=cfg.robots.lookahead_m,
            )
            f.start_at_nearest(robot.p)
            followers.append(f)
    out = []
    for robot, f in zip(robots, followers):
        cmd, _ = f.command(robot, cfg.dt_s, cfg.robots.v_max_mps)
        out.append(cmd)
    return out, followers


def make_planner(kind: str, cfg: RunConfig):
    if kind == "ws":
        return WaypointPlanner(cfg)
    if kind == "mcpp":
        return LoopPlanner(cfg, use_lp_speeds=False)
    if kind == "pm":
        return LoopPlanner(cfg, use_lp_speeds=True)
    if kind == "fc":
        return StationaryPlanner(cfg)
    raise ValueError(f"unknown planner kind {kind!r}")
