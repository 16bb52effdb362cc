"""Simulation loop: global state, discrete-action robot kinematics, local
observations, belief-improvement reward, episode records.

Humans replay precomputed plans and never react to robots. All randomness
flows from named substreams of the episode seed, so records are bitwise
reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import belief as bel
from .config import RunConfig, SPEED_COMMANDS, TURN_COMMANDS
from .errors import EpisodeFinished, SpawnFailed
from .geometry import supercover_cells, wrap_angle
from .mapgen import GridWorld
from .sensing import (
    FIXED_CAMERA,
    LIDAR,
    SensorSpec,
    lidar_scan_n,
    noisy_measurement,
    visibility_mask,
)

_SPAWN_STREAM = 303
_NOISE_STREAM = 304
_PLANNER_STREAM = 305


@dataclass
class AgentState:
    p: np.ndarray
    theta: float
    v: float
    lidar: np.ndarray | None = None

    def pose(self):
        return self.p, self.theta


@dataclass(frozen=True)
class ActionCommand:
    v_cmd: float
    delta_cmd: float

    def __post_init__(self):
        if self.v_cmd not in SPEED_COMMANDS:
            raise ValueError(f"v_cmd must be one of {SPEED_COMMANDS}")
        if not any(abs(self.delta_cmd - t) < 1e-12 for t in TURN_COMMANDS):
            raise ValueError(f"delta_cmd must be one of {TURN_COMMANDS}")

    @staticmethod
    def from_indices(v_idx: int, d_idx: int) -> "ActionCommand":
        return ActionCommand(SPEED_COMMANDS[v_idx], TURN_COMMANDS[d_idx])

    def to_indices(self):
        v_idx = SPEED_COMMANDS.index(self.v_cmd)
        d_idx = int(np.argmin([abs(self.delta_cmd - t) for t in TURN_COMMANDS]))
        return v_idx, d_idx


@dataclass
class LocalObservation:
    ego_p: np.ndarray
    ego_theta: float
    ego_v: float
    lidar: np.ndarray
    peers: list  # (p, theta, v) of the other robots, by robot index
    humans: list  # NoisyHumanMeasurement for the visible humans, by human index


@dataclass
class StepResult:
    observations: list
    reward: float
    done: bool
    info: dict


def kinematics_step(
    state: AgentState,
    action: ActionCommand,
    dt: float,
    a_max: float,
    world: GridWorld,
    post_update_heading: bool = False,
) -> AgentState:
    """Discrete-time unicycle update with a speed ramp and collision stop.

    The position integrates the pre-update speed and (by default) the
    pre-update heading; a move that would cross or end in a wall cell keeps
    the position and zeroes the speed. The heading always turns.
    """
    theta_new = wrap_angle(state.theta + action.delta_cmd * dt)
    heading = theta_new if post_update_heading else state.theta
    step = state.v * dt
    px = float(state.p[0]) + step * math.cos(heading)
    py = float(state.p[1]) + step * math.sin(heading)
    dv = action.v_cmd - state.v
    ramp = a_max * dt
    v_new = state.v + max(-ramp, min(ramp, dv))
    if step > 0.0:
        blocked = not (0.0 <= px < world.width_m and 0.0 <= py < world.height_m)
        if not blocked:
            for cell in supercover_cells((state.p[0], state.p[1]), (px, py), world.cell_size_m):
                if not world.is_free_cell(*cell):
                    blocked = True
                    break
        if blocked:
            return AgentState(p=state.p.copy(), theta=theta_new, v=0.0)
    return AgentState(p=np.array([px, py]), theta=theta_new, v=v_new)


class MonitorEnv:
    """One episode's worth of simulator state (single-writer; step sequentially)."""

    def __init__(self, world: GridWorld, crowd_plans, cfg: RunConfig, fixed_cameras=None):
        self.world = world
        self.plans = list(crowd_plans)
        self.cfg = cfg
        self.n_robots = cfg.robots.n_robots
        self.n_humans = len(self.plans)
        self.T = cfg.horizon
        self.dt = cfg.dt_s
        self.fixed_cameras = list(fixed_cameras or [])
        s = cfg.sensors
        self.tracking_spec = SensorSpec(s.tracking_range_m, s.tracking_fov_rad, s.k_samples)
        self.camera_spec = SensorSpec(s.tracking_range_m, s.tracking_fov_rad, s.k_samples, kind=FIXED_CAMERA)
        self.lidar_spec = SensorSpec(s.lidar_range_m, 2.0 * math.pi, s.k_samples, kind=LIDAR, beams=s.lidar_beams)
        self.t = -1  # reset() required

    # -- helpers -------------------------------------------------------------

    def _human_states(self, t: int):
        return [pl.state_at(t) for pl in self.plans]

    def _human_positions(self, t: int) -> np.ndarray:
        if self.n_humans == 0:
            return np.zeros((0, 2))
        return np.stack([pl.positions[t] for pl in self.plans])

    def _scan(self, robot: AgentState):
        return lidar_scan_n(
            robot.p, robot.theta, self.world, self.cfg.sensors.lidar_range_m, self.cfg.sensors.lidar_beams
        )

    def _visible(self, pose, positions: np.ndarray, spec: SensorSpec):
        if positions.shape[0] == 0:
            return []
        mask = visibility_mask(pose, positions, self.world, spec)
        return [int(i) for i in np.nonzero(mask)[0]]

    def _observations(self, visible_per_robot, measurements):
        obs = []
        for i, robot in enumerate(self.robots):
            peers = [
                (self.robots[j].p.copy(), self.robots[j].theta, self.robots[j].v)
                for j in range(self.n_robots)
                if j != i
            ]
            humans = [measurements[i][j] for j in visible_per_robot[i]]
            obs.append(
                LocalObservation(
                    ego_p=robot.p.copy(),
                    ego_theta=robot.theta,
                    ego_v=robot.v,
                    lidar=robot.lidar.copy(),
                    peers=peers,
                    humans=humans,
                )
            )
        return obs

    def _sense(self):
        """Visibility, lidar, and measurements for the current step; updates beliefs."""
        human_positions = self._human_positions(self.t)
        s = self.cfg.sensors
        visible_per_robot = []
        measurements = []
        for robot in self.robots:
            robot.lidar = self._scan(robot)
            vis = self._visible(robot.pose(), human_positions, self.tracking_spec)
            visible_per_robot.append(vis)
            meas = {}
            for j in vis:
                pj, thj, vj = self.plans[j].state_at(self.t)
                meas[j] = noisy_measurement((pj, thj, vj), self._noise_rng, s.sigma_p_m, s.sigma_theta_rad, s.sigma_v_mps)
            measurements.append(meas)
        visible_per_cam = [
            self._visible(cam, human_positions, self.camera_spec) for cam in self.fixed_cameras
        ]
        union = sorted(set().union(*visible_per_robot, *visible_per_cam) if (visible_per_robot or visible_per_cam) else set())
        # positions fed into the belief update: ground truth while training,
        # first observer's noisy measurement in deployment mode
        update_positions = human_positions.copy()
        if self.cfg.reward.deployment_mode:
            cam_meas = {}
            for ci, vis in enumerate(visible_per_cam):
                for j in vis:
                    if j not in cam_meas:
                        pj, thj, vj = self.plans[j].state_at(self.t)
                        cam_meas[j] = noisy_measurement(
                            (pj, thj, vj), self._noise_rng, s.sigma_p_m, s.sigma_theta_rad, s.sigma_v_mps
                        )
            for j in union:
                src = next((measurements[i][j] for i in range(self.n_robots) if j in measurements[i]), None)
                if src is None:
                    src = cam_meas[j]
                update_positions[j] = src.p
        return human_positions, visible_per_robot, visible_per_cam, union, measurements, update_positions

    # -- public API ----------------------------------------------------------

    def reset(self, seed: int):
        rng = np.random.default_rng([int(seed), _SPAWN_STREAM])
        self._noise_rng = np.random.default_rng([int(seed), _NOISE_STREAM])
        self.seed = int(seed)
        free = self.world.free_cell_centers()
        sep = self.cfg.robots.spawn_separation_m
        poses = []
        attempts = 200 * max(1, self.n_robots)
        while len(poses) < self.n_robots:
            if attempts <= 0:
                raise SpawnFailed(
                    f"could not place {self.n_robots} robots with separation {sep} m"
                )
            attempts -= 1
            p = free[int(rng.integers(0, len(free)))]
            if all(np.linalg.norm(p - q) >= sep for q, _ in poses):
                poses.append((p.copy(), float(rng.uniform(0.0, 2.0 * math.pi))))
        self.robots = [AgentState(p=p, theta=th, v=0.0) for p, th in poses]
        self.t = 0
        init_positions = self._human_positions(0)
        mode = self.cfg.reward.belief_init
        self.position_belief = bel.init_belief(self.world, init_positions, mode)
        self.flow_belief = bel.init_flow_belief(self.world, init_positions, mode)
        self.occupancy_est = bel.estimate_occupancy(self.position_belief, self.world)
        self.true_flow = bel.TrueFlowTracker(self.world, init_positions)
        (_, visible_per_robot, visible_per_cam, union, measurements, _) = self._sense()
        self.last_visibility = (visible_per_robot, visible_per_cam, union)
        return self._observations(visible_per_robot, measurements)

    def step(self, actions) -> StepResult:
        if self.t < 0:
            raise EpisodeFinished("reset() must be called before step()")
        if self.t >= self.T:
            raise EpisodeFinished(f"episode already finished at t={self.t}")
        if len(actions) != self.n_robots:
            raise ValueError(f"expected {self.n_robots} actions, got {len(actions)}")
        self.t += 1
        for i, action in enumerate(actions):
            self.robots[i] = kinematics_step(
                self.robots[i],
                action,
                self.dt,
                self.cfg.robots.a_max_mps2,
                self.world,
                self.cfg.robots.position_uses_updated_heading,
            )
        (
            human_positions,
            visible_per_robot,
            visible_per_cam,
            union,
            measurements,
            update_positions,
        ) = self._sense()
        self.last_visibility = (visible_per_robot, visible_per_cam, union)

        task = self.cfg.task
        rc = self.cfg.reward
        m_prev_track = self.position_belief.p_hat.copy()
        m_prev_occ = self.occupancy_est
        m_prev_flow = self.flow_belief.flow.copy()
        bel.update_position_belief(self.position_belief, union, update_positions, self.t)
        bel.update_flow_belief(self.flow_belief, union, update_positions, self.world, self.t)
        self.occupancy_est = bel.estimate_occupancy(self.position_belief, self.world)
        self.true_flow.step(human_positions)
        if task == bel.TASK_TRACKING:
            r = bel.reward(task, m_prev_track, self.position_belief.p_hat, rc.component_clip, rc.total_clip)
        elif task == bel.TASK_OCCUPANCY:
            r = bel.reward(task, m_prev_occ, self.occupancy_est, rc.component_clip, rc.total_clip)
        else:
            r = bel.reward(task, m_prev_flow, self.flow_belief.flow, rc.component_clip, rc.total_clip)

        done = self.t >= self.T
        human_states = self._human_states(self.t)
        info = {
            "t": self.t,
            "human_states": human_states,
            "visible_per_robot": visible_per_robot,
            "visible_per_cam": visible_per_cam,
            "union_visible": union,
            "update_positions": update_positions,
        }
        obs = self._observations(visible_per_robot, measurements)
        return StepResult(observations=obs, reward=r, done=done, info=info)


@dataclass
class EpisodeRecord:
    """Everything needed to replay, score, and plot one seeded episode."""

    seed: int
    task: str
    planner: str
    n_robots: int
    n_humans: int
    horizon: int
    dt: float
    robot_traj: np.ndarray  # (T+1, n, 4) x, y, theta, v
    human_traj: np.ndarray  # (T+1, M, 4)
    actions: np.ndarray  # (T, n, 2) indices
    rewards: np.ndarray  # (T,)
    union_visible: list  # per step 1..T, sorted human indices
    visible_per_robot: list  # per step 1..T, list per robot
    visible_per_cam: list  # per step 1..T, list per camera
    update_positions: list  # per step 1..T, (M, 2) positions fed to the belief
    belief_positions: np.ndarray  # (T+1, M, 2)
    occupancy_est: np.ndarray  # (T+1, Z)
    occupancy_true: np.ndarray  # (T+1, Z)
    flow_est_final: np.ndarray  # (Z, Z)
    flow_true_final: np.ndarray  # (Z, Z)
    fixed_cameras: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    @property
    def episode_reward(self) -> float:
        return float(self.rewards.sum())

    def compute_metrics(self) -> dict:
        out = {
            "tracking": bel.tracking_error(self.belief_positions[1:], self.human_traj[1:, :, :2])
            if self.horizon > 0
            else 0.0,
            "occupancy": bel.occupancy_error(self.occupancy_est[1:], self.occupancy_true[1:])
            if self.horizon > 0
            else 0.0,
            "flow": bel.flow_error(self.flow_est_final, self.flow_true_final),
        }
        self.metrics = out
        return out

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "seed": self.seed,
            "task": self.task,
            "planner": self.planner,
            "n_robots": self.n_robots,
            "n_humans": self.n_humans,
            "horizon": self.horizon,
            "dt": self.dt,
            "robot_traj": self.robot_traj.tolist(),
            "human_traj": self.human_traj.tolist(),
            "actions": self.actions.tolist(),
            "rewards": self.rewards.tolist(),
            "union_visible": self.union_visible,
            "visible_per_robot": self.visible_per_robot,
            "visible_per_cam": self.visible_per_cam,
            "update_positions": [u.tolist() for u in self.update_positions],
            "belief_positions": self.belief_positions.tolist(),
            "occupancy_est": self.occupancy_est.tolist(),
            "occupancy_true": self.occupancy_true.tolist(),
            "flow_est_final": self.flow_est_final.tolist(),
            "flow_true_final": self.flow_true_final.tolist(),
            "fixed_cameras": [[list(map(float, p)), float(th)] for p, th in self.fixed_cameras],
            "metrics": self.metrics,
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @staticmethod
    def from_dict(d: dict) -> "EpisodeRecord":
        rec = EpisodeRecord(
            seed=int(d["seed"]),
            task=d["task"],
            planner=d["planner"],
            n_robots=int(d["n_robots"]),
            n_humans=int(d["n_humans"]),
            horizon=int(d["horizon"]),
            dt=float(d["dt"]),
            robot_traj=np.asarray(d["robot_traj"], dtype=float),
            human_traj=np.asarray(d["human_traj"], dtype=float),
            actions=np.asarray(d["actions"], dtype=int).reshape(int(d["horizon"]), int(d["n_robots"]), 2),
            rewards=np.asarray(d["rewards"], dtype=float),
            union_visible=d["union_visible"],
            visible_per_robot=d["visible_per_robot"],
            visible_per_cam=d["visible_per_cam"],
            update_positions=[np.asarray(u, dtype=float) for u in d["update_positions"]],
            belief_positions=np.asarray(d["belief_positions"], dtype=float),
            occupancy_est=np.asarray(d["occupancy_est"], dtype=np.int64),
            occupancy_true=np.asarray(d["occupancy_true"], dtype=np.int64),
            flow_est_final=np.asarray(d["flow_est_final"], dtype=np.int64),
            flow_true_final=np.asarray(d["flow_true_final"], dtype=np.int64),
            fixed_cameras=[(np.asarray(p, dtype=float), float(th)) for p, th in d["fixed_cameras"]],
            metrics=d.get("metrics", {}),
        )
        return rec

    @staticmethod
    def load(path) -> "EpisodeRecord":
        with open(path) as fh:
            return EpisodeRecord.from_dict(json.load(fh))


def _snapshot_agents(agents) -> np.ndarray:
    if not agents:
        return np.zeros((0, 4))
    return np.array([[a.p[0], a.p[1], a.theta, a.v] for a in agents])


def _snapshot_humans(env: MonitorEnv) -> np.ndarray:
    if env.n_humans == 0:
        return np.zeros((0, 4))
    return np.array(
        [[pl.positions[env.t][0], pl.positions[env.t][1], pl.thetas[env.t], pl.speeds[env.t]] for pl in env.plans]
    )


def run_episode(world, crowd_plans, planner, cfg: RunConfig, seed: int, fixed_cameras=None) -> EpisodeRecord:
    """Reset + T steps with an in-process planner, logging everything."""
    env = MonitorEnv(world, crowd_plans, cfg, fixed_cameras)
    env.reset(seed)
    T, n, M = cfg.horizon, env.n_robots, env.n_humans
    Z = len(world.zones)
    robot_traj = np.zeros((T + 1, n, 4))
    human_traj = np.zeros((T + 1, M, 4))
    actions_log = np.zeros((T, n, 2), dtype=int)
    rewards = np.zeros(T)
    union_log, vis_robot_log, vis_cam_log, upd_log = [], [], [], []
    belief_positions = np.zeros((T + 1, M, 2))
    occupancy_est = np.zeros((T + 1, Z), dtype=np.int64)
    occupancy_true = np.zeros((T + 1, Z), dtype=np.int64)

    robot_traj[0] = _snapshot_agents(env.robots)
    human_traj[0] = _snapshot_humans(env)
    belief_positions[0] = env.position_belief.p_hat
    occupancy_est[0] = env.occupancy_est
    occupancy_true[0] = bel.true_occupancy(world, env._human_positions(0))

    if planner is not None:
        planner.reset(world, env.robots, np.random.default_rng([int(seed), _PLANNER_STREAM]))
    for t in range(1, T + 1):
        acts = planner.act(env.robots) if planner is not None else []
        res = env.step(acts)
        robot_traj[t] = _snapshot_agents(env.robots)
        human_traj[t] = _snapshot_humans(env)
        for i, a in enumerate(acts):
            actions_log[t - 1, i] = a.to_indices()
        rewards[t - 1] = res.reward
        union_log.append(list(res.info["union_visible"]))
        vis_robot_log.append([list(v) for v in res.info["visible_per_robot"]])
        vis_cam_log.append([list(v) for v in res.info["visible_per_cam"]])
        upd_log.append(np.asarray(res.info["update_positions"]))
        belief_positions[t] = env.position_belief.p_hat
        occupancy_est[t] = env.occupancy_est
        occupancy_true[t] = bel.true_occupancy(world, env._human_positions(t))

    rec = EpisodeRecord(
        seed=int(seed),
        task=cfg.task,
        planner=cfg.planner,
        n_robots=n,
        n_humans=M,
        horizon=T,
        dt=cfg.dt_s,
        robot_traj=robot_traj,
        human_traj=human_traj,
        actions=actions_log,
        rewards=rewards,
        union_visible=union_log,
        visible_per_robot=vis_robot_log,
        visible_per_cam=vis_cam_log,
        update_positions=upd_log,
        belief_positions=belief_positions,
        occupancy_est=occupancy_est,
        occupancy_true=occupancy_true,
        flow_est_final=env.flow_belief.flow.copy(),
        flow_true_final=env.true_flow.flow.copy(),
        fixed_cameras=[(np.asarray(p, dtype=float), float(th)) for p, th in (fixed_cameras or [])],
    )
    rec.compute_metrics()
    return rec


def replay_rewards(world, record: EpisodeRecord, cfg: RunConfig) -> np.ndarray:
    """Recompute the reward sequence from the logged visibility and update positions.

    Uses the same belief arithmetic as the live environment, so results match
    bit for bit.
    """
    init_positions = record.human_traj[0, :, :2]
    pb = bel.init_belief(world, init_positions, cfg.reward.belief_init)
    fb = bel.init_flow_belief(world, init_positions, cfg.reward.belief_init)
    occ = bel.estimate_occupancy(pb, world)
    rc = cfg.reward
    out = np.zeros(record.horizon)
    for t in range(1, record.horizon + 1):
        union = record.union_visible[t - 1]
        upd = record.update_positions[t - 1]
        m_prev_track = pb.p_hat.copy()
        m_prev_occ = occ
        m_prev_flow = fb.flow.copy()
        bel.update_position_belief(pb, union, upd, t)
        bel.update_flow_belief(fb, union, upd, world, t)
        occ = bel.estimate_occupancy(pb, world)
        if record.task == bel.TASK_TRACKING:
            out[t - 1] = bel.reward(record.task, m_prev_track, pb.p_hat, rc.component_clip, rc.total_clip)
        elif record.task == bel.TASK_OCCUPANCY:
            out[t - 1] = bel.reward(record.task, m_prev_occ, occ, rc.component_clip, rc.total_clip)
        else:
            out[t - 1] = bel.reward(record.task, m_prev_flow, fb.flow, rc.component_clip, rc.total_clip)
    return out
