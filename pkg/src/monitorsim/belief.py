"""Persistent team belief over humans, task estimators, and the improvement reward.

The position belief keeps each human's last observed position. Occupancy and
flow estimates derive from it per the task definitions; the shared reward is
the clipped L1 change of the task estimate after each update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .mapgen import GridWorld, zones_of_points

TASK_TRACKING = "tracking"
TASK_OCCUPANCY = "occupancy"
TASK_FLOW = "flow"

NEVER = -1
NO_ZONE = -1


@dataclass
class PositionBelief:
    p_hat: np.ndarray  # (M, 2)
    last_seen: np.ndarray  # (M,) step index, NEVER if unobserved

    def copy(self) -> "PositionBelief":
        return PositionBelief(self.p_hat.copy(), self.last_seen.copy())


@dataclass
class FlowBelief:
    z_prev: np.ndarray  # (M,) zone ids, NO_ZONE when undefined
    z_cur: np.ndarray
    tau: np.ndarray  # (M,) step of last recorded transition, NEVER if none
    flow: np.ndarray  # (Z, Z) nonnegative counts

    def copy(self) -> "FlowBelief":
        return FlowBelief(self.z_prev.copy(), self.z_cur.copy(), self.tau.copy(), self.flow.copy())


def init_belief(world: GridWorld, humans_initial: np.ndarray, mode: str = "informed") -> PositionBelief:
    """Informed: beliefs start at the true initial positions. Uninformed: map centroid."""
    humans_initial = np.asarray(humans_initial, dtype=float).reshape(-1, 2)
    m = humans_initial.shape[0]
    if mode == "informed":
        return PositionBelief(p_hat=humans_initial.copy(), last_seen=np.zeros(m, dtype=np.int64))
    if mode == "uninformed":
        center = np.array([world.width_m / 2.0, world.height_m / 2.0])
        return PositionBelief(
            p_hat=np.tile(center, (m, 1)), last_seen=np.full(m, NEVER, dtype=np.int64)
        )
    raise ValueError(f"unknown belief init mode {mode!r}")


def init_flow_belief(world: GridWorld, humans_initial: np.ndarray, mode: str = "informed") -> FlowBelief:
    humans_initial = np.asarray(humans_initial, dtype=float).reshape(-1, 2)
    m = humans_initial.shape[0]
    z = len(world.zones)
    fb = FlowBelief(
        z_prev=np.full(m, NO_ZONE, dtype=np.int64),
        z_cur=np.full(m, NO_ZONE, dtype=np.int64),
        tau=np.full(m, NEVER, dtype=np.int64),
        flow=np.zeros((z, z), dtype=np.int64),
    )
    if mode == "informed" and m > 0:
        fb.z_cur = zones_of_points(world, humans_initial).astype(np.int64)
    return fb


def update_position_belief(belief: PositionBelief, union_visible, true_positions: np.ndarray, t: int):
    """Snap observed beliefs to the current positions; returns per-human L1 deltas."""
    true_positions = np.asarray(true_positions, dtype=float)
    deltas = np.zeros(belief.p_hat.shape[0])
    if len(union_visible) == 0:
        return belief, deltas
    idx = np.fromiter(sorted(union_visible), dtype=np.int64)
    diff = true_positions[idx] - belief.p_hat[idx]
    deltas[idx] = np.abs(diff).sum(axis=1)
    belief.p_hat[idx] = true_positions[idx]
    belief.last_seen[idx] = t
    return belief, deltas


def estimate_occupancy(belief: PositionBelief, world: GridWorld) -> np.ndarray:
    """Zone-wise count of beliefs; beliefs outside every zone are uncounted."""
    z = len(world.zones)
    counts = np.zeros(z, dtype=np.int64)
    if belief.p_hat.shape[0] == 0:
        return counts
    zones = zones_of_points(world, belief.p_hat)
    valid = zones >= 0
    np.add.at(counts, zones[valid], 1)
    return counts


def update_flow_belief(fb: FlowBelief, union_visible, true_positions: np.ndarray, world: GridWorld, t: int):
    """Record a directed zone transition for each observed human whose zone changed.

    Sightings outside every zone leave the per-human state untouched; a first
    zone sighting sets the current zone without recording a transition.
    Returns (fb, number of transitions recorded).
    """
    if len(union_visible) == 0:
        return fb, 0
    idx = np.fromiter(sorted(union_visible), dtype=np.int64)
    zones = zones_of_points(world, np.asarray(true_positions, dtype=float)[idx])
    increments = 0
    for j, z_new in zip(idx, zones):
        if z_new == NO_ZONE:
            continue
        z_old = fb.z_cur[j]
        if z_old == NO_ZONE:
            fb.z_cur[j] = z_new
        elif z_new != z_old:
            fb.z_prev[j] = z_old
            fb.z_cur[j] = z_new
            fb.tau[j] = t
            fb.flow[z_old, z_new] += 1
            increments += 1
    return fb, increments


def reward(task: str, m_prev: np.ndarray, m_cur: np.ndarray, component_clip: float, total_clip: float) -> float:
    """Clipped L1 improvement of the task estimate.

    Component grouping follows the task: per-human L1 for tracking, per-zone
    for occupancy, per zone pair for flow. Each component's contribution is
    clipped to component_clip, the sum to total_clip.
    """
    m_prev = np.asarray(m_prev, dtype=float)
    m_cur = np.asarray(m_cur, dtype=float)
    if m_prev.shape != m_cur.shape:
        raise ShapeMismatch(f"estimate shapes differ: {m_prev.shape} vs {m_cur.shape}")
    diff = np.abs(m_cur - m_prev)
    if task == TASK_TRACKING:
        comp = diff.reshape(-1, 2).sum(axis=1)
    else:
        comp = diff.ravel()
    comp = np.minimum(comp, component_clip)
    return float(min(comp.sum(), total_clip))


def tracking_error(belief_trace: np.ndarray, true_trace: np.ndarray) -> float:
    """Mean Euclidean distance between belief and truth over steps and humans."""
    belief_trace = np.asarray(belief_trace, dtype=float)
    true_trace = np.asarray(true_trace, dtype=float)
    if belief_trace.shape != true_trace.shape:
        raise ShapeMismatch(f"trace shapes differ: {belief_trace.shape} vs {true_trace.shape}")
    if belief_trace.size == 0:
        return 0.0
    d = np.linalg.norm(belief_trace - true_trace, axis=-1)
    return float(d.mean())


def occupancy_error(est_trace: np.ndarray, true_trace: np.ndarray) -> float:
    """Mean per-step L1 distance between estimated and true zone counts."""
    est_trace = np.asarray(est_trace, dtype=float)
    true_trace = np.asarray(true_trace, dtype=float)
    if est_trace.shape != true_trace.shape:
        raise ShapeMismatch(f"trace shapes differ: {est_trace.shape} vs {true_trace.shape}")
    if est_trace.size == 0:
        return 0.0
    return float(np.abs(est_trace - true_trace).sum(axis=-1).mean())


def flow_error(est_final: np.ndarray, true_final: np.ndarray) -> float:
    """L1 distance between final flow-count matrices."""
    est_final = np.asarray(est_final, dtype=float)
    true_final = np.asarray(true_final, dtype=float)
    if est_final.shape != true_final.shape:
        raise ShapeMismatch(f"matrix shapes differ: {est_final.shape} vs {true_final.shape}")
    return float(np.abs(est_final - true_final).sum())


def metric(task: str, estimate_trace, truth_trace) -> float:
    if task == TASK_TRACKING:
        return tracking_error(estimate_trace, truth_trace)
    if task == TASK_OCCUPANCY:
        return occupancy_error(estimate_trace, truth_trace)
    if task == TASK_FLOW:
        return flow_error(estimate_trace, truth_trace)
    raise ValueError(f"unknown task {task!r}")


class TrueFlowTracker:
    """Ground-truth flow counts with the same corridor rule as the estimator."""

    def __init__(self, world: GridWorld, initial_positions: np.ndarray):
        m = np.asarray(initial_positions, dtype=float).reshape(-1, 2).shape[0]
        z = len(world.zones)
        self.world = world
        self.z_cur = (
            zones_of_points(world, initial_positions).astype(np.int64)
            if m
            else np.zeros(0, dtype=np.int64)
        )
        self.flow = np.zeros((z, z), dtype=np.int64)

    def step(self, positions: np.ndarray):
        if self.z_cur.shape[0] == 0:
            return
        zones = zones_of_points(self.world, positions)
        for j, z_new in enumerate(zones):
            if z_new == NO_ZONE:
                continue
            z_old = self.z_cur[j]
            if z_old == NO_ZONE:
                self.z_cur[j] = z_new
            elif z_new != z_old:
                self.flow[z_old, z_new] += 1
                self.z_cur[j] = z_new


def true_occupancy(world: GridWorld, positions: np.ndarray) -> np.ndarray:
    z = len(world.zones)
    counts = np.zeros(z, dtype=np.int64)
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    if positions.shape[0] == 0:
        return counts
    zones = zones_of_points(world, positions)
    valid = zones >= 0
    np.add.at(counts, zones[valid], 1)
    return counts
