"""Sensing models: range/FoV/occlusion visibility, 360-degree LiDAR, measurement noise.

Occlusion is tested at K equally spaced interior points of the sight segment
(fractions i/(K+1), endpoints excluded), which approximates dense ray tracing
and can skip walls thinner than the sampling gap; tests bound that deviation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import TWO_PI, wrap_angle
from .mapgen import FREE, GridWorld

TRACKING = "tracking"
LIDAR = "lidar"
FIXED_CAMERA = "fixed_camera"


@dataclass(frozen=True)
class SensorSpec:
    range_m: float
    fov_rad: float
    k_samples: int = 5
    kind: str = TRACKING
    beams: int = 16  # lidar kind only

    def __post_init__(self):
        if self.range_m <= 0:
            raise ValueError("range_m must be positive")
        if not (0.0 < self.fov_rad <= TWO_PI + 1e-12):
            raise ValueError("fov_rad must be in (0, 2*pi]")
        if self.k_samples < 2:
            raise ValueError("k_samples must be >= 2")


@dataclass
class NoisyHumanMeasurement:
    p: np.ndarray
    theta: float
    v: float


def visibility_mask(pose, targets: np.ndarray, world: GridWorld, spec: SensorSpec) -> np.ndarray:
    """Boolean visibility of each target point from pose=(p, theta).

    Visible iff within range, within +/- fov/2 of the heading (boundary
    inclusive; skipped for full-circle sensors), and all K interior samples of
    the sight segment land in free cells.
    """
    p, theta = pose
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if targets.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    delta = targets - np.asarray(p, dtype=float)
    dist = np.hypot(delta[:, 0], delta[:, 1])
    ok = dist <= spec.range_m
    if spec.fov_rad < TWO_PI - 1e-12:
        bearing = np.arctan2(delta[:, 1], delta[:, 0])
        rel = np.remainder(bearing - theta + math.pi, TWO_PI) - math.pi
        ok &= np.abs(rel) <= spec.fov_rad / 2.0 + 1e-12
    if not ok.any():
        return ok
    idx = np.nonzero(ok)[0]
    k = spec.k_samples
    fractions = np.arange(1, k + 1, dtype=float) / (k + 1)
    # (n, k, 2) interior sample points of each sight segment
    samples = np.asarray(p, dtype=float)[None, None, :] + delta[idx][:, None, :] * fractions[None, :, None]
    cs = world.cell_size_m
    ix = np.clip((samples[..., 0] // cs).astype(int), 0, world.width_cells - 1)
    iy = np.clip((samples[..., 1] // cs).astype(int), 0, world.height_cells - 1)
    clear = (world.cells[iy, ix] == FREE).all(axis=1)
    ok[idx] = clear
    return ok


def f_vis(robot_pose, human_p, world: GridWorld, spec: SensorSpec) -> int:
    """Binary visibility of one human position from one robot pose."""
    return int(visibility_mask(robot_pose, np.asarray(human_p, dtype=float)[None, :], world, spec)[0])


def visible_set(robot_pose, human_states, world: GridWorld, spec: SensorSpec) -> set:
    """Indices of humans visible from the robot pose."""
    if len(human_states) == 0:
        return set()
    pts = np.asarray([hs[0] for hs in human_states], dtype=float)
    mask = visibility_mask(robot_pose, pts, world, spec)
    return set(int(i) for i in np.nonzero(mask)[0])


def visible_free_cells(pose, world: GridWorld, spec: SensorSpec) -> np.ndarray:
    """Indices into world.free_cell_centers() of cells visible from pose."""
    centers = world.free_cell_centers()
    mask = visibility_mask(pose, centers, world, spec)
    return np.nonzero(mask)[0]


# March step used by the LiDAR model, as a fraction of the cell size.
LIDAR_STEP_FRACTION = 0.25


def lidar_scan(pose, world: GridWorld, spec: SensorSpec) -> np.ndarray:
    """Distances to the first wall cell along each of L evenly spaced beams.

    Beam i points at theta + 2*pi*i/L. Distances are found by marching the
    grid at cell_size/4 resolution and capped at range_m.
    """
    p, theta = pose
    return lidar_scan_n(p, theta, world, spec.range_m, spec.beams)


def lidar_scan_n(p, theta: float, world: GridWorld, range_m: float, n_beams: int) -> np.ndarray:
    cs = world.cell_size_m
    step = cs * LIDAR_STEP_FRACTION
    n_steps = int(math.ceil(range_m / step))
    ts = np.arange(1, n_steps + 1) * step
    angles = theta + TWO_PI * np.arange(n_beams) / n_beams
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    pts = np.asarray(p, dtype=float)[None, None, :] + dirs[:, None, :] * ts[None, :, None]
    ix = (pts[..., 0] // cs).astype(int)
    iy = (pts[..., 1] // cs).astype(int)
    inside = (ix >= 0) & (ix < world.width_cells) & (iy >= 0) & (iy < world.height_cells)
    wall = ~inside
    ix = np.clip(ix, 0, world.width_cells - 1)
    iy = np.clip(iy, 0, world.height_cells - 1)
    wall |= world.cells[iy, ix] != FREE
    hit_any = wall.any(axis=1)
    first = np.argmax(wall, axis=1)
    out = np.where(hit_any, ts[first], range_m)
    return np.minimum(out, range_m)


def noisy_measurement(true_state, rng: np.random.Generator, sigma_p: float, sigma_theta: float, sigma_v: float) -> NoisyHumanMeasurement:
    """Gaussian-corrupted pose/speed measurement; angle wrapped, speed floored at 0."""
    p, theta, v = true_state
    p_noisy = np.asarray(p, dtype=float) + rng.normal(0.0, sigma_p, size=2)
    theta_noisy = wrap_angle(theta + rng.normal(0.0, sigma_theta))
    v_noisy = max(0.0, v + rng.normal(0.0, sigma_v))
    return NoisyHumanMeasurement(p=p_noisy, theta=theta_noisy, v=v_noisy)
