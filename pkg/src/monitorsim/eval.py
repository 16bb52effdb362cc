"""Experiment harness: team-size sweeps, OOD crowd variants, marginal utility,
reward-error correlation, visibility heatmaps, and hybrid fixed+mobile budgets.

Sweeps share synthesized crowds across configurations with the same crowd
parameters (the paired-seed design the comparisons assume) and are
deterministic in the base seed regardless of execution order.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import crowd as crowdmod
from . import mapgen
from .config import RunConfig, apply_variant, config_to_dict
from .env import EpisodeRecord, run_episode
from .errors import DegenerateVariance, MissingTeamSize
from .mapgen import GridWorld
from .pathing import PathRouter
from .planners import fc_place, make_planner
from .sensing import FIXED_CAMERA, SensorSpec, visible_free_cells

_CROWD_EPISODE_STREAM = 506


@dataclass(frozen=True)
class ScenarioSpec:
    """One evaluation configuration; episodes vary only in seed."""

    cfg: RunConfig
    label: str = ""

    def config_hash(self) -> str:
        blob = json.dumps(config_to_dict(self.cfg), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class EpisodeRow:
    label: str
    config_hash: str
    seed: int
    task: str
    planner: str
    n_robots: int
    n_fixed: int
    variant: str
    metric: float
    reward: float


@dataclass
class SweepResult:
    rows: list
    aggregates: dict  # label -> {mean, std, n, ...}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["label", "config_hash", "seed", "task", "planner", "n_robots", "n_fixed", "variant", "metric", "reward"]
            )
            for r in self.rows:
                writer.writerow(
                    [r.label, r.config_hash, r.seed, r.task, r.planner, r.n_robots, r.n_fixed, r.variant, repr(r.metric), repr(r.reward)]
                )

    def summary_dict(self) -> dict:
        return {"aggregates": self.aggregates}


def isolated_zone(world: GridWorld) -> int:
    """Zone whose centroid is hardest to reach from the others on average."""
    router = PathRouter(world, 0.0)
    centroids = []
    for z in sorted(world.zones, key=lambda z: z.id):
        pts = np.array([world.rooms[rid].centroid for rid in z.room_ids])
        c = pts.mean(axis=0)
        # snap to the nearest member room centroid, which is guaranteed free
        nearest_room = min(z.room_ids, key=lambda rid: np.linalg.norm(world.rooms[rid].centroid - c))
        centroids.append(world.rooms[nearest_room].centroid)
    z_count = len(centroids)
    if z_count == 1:
        return world.zones[0].id
    dist = np.zeros((z_count, z_count))
    for i in range(z_count):
        for j in range(z_count):
            if i != j:
                dist[i, j] = router.distance(centroids[i], centroids[j])
    mean_dist = dist.sum(axis=1) / (z_count - 1)
    return int(np.argmax(mean_dist))


_world_cache: dict = {}


def resolve_world(cfg: RunConfig) -> GridWorld:
    """Build (or reuse) the scenario's map; cached so derived geometry is shared."""
    if cfg.map_file:
        key = ("file", os.path.abspath(cfg.map_file))
        if key not in _world_cache:
            _world_cache[key] = mapgen.load_map(cfg.map_file)
        return _world_cache[key]
    params = mapgen.MapParams(
        width_m=cfg.map.width_m,
        height_m=cfg.map.height_m,
        n_rooms=cfg.map.n_rooms,
        room_size_range=(cfg.map.room_min_m, cfg.map.room_max_m),
        corridor_width_m=cfg.map.corridor_width_m,
        cell_size_m=cfg.map.cell_size_m,
    )
    key = ("gen", cfg.map_seed, dataclasses.astuple(params))
    if key not in _world_cache:
        _world_cache[key] = mapgen.generate_map(cfg.map_seed, params)
    return _world_cache[key]


def crowd_seed_for(base_seed: int, episode: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), _CROWD_EPISODE_STREAM, int(episode)]).generate_state(1)[0])


def prepare_scenario(cfg: RunConfig, world: GridWorld | None = None):
    """Resolve the map and apply the OOD variant (needs the map for 'skewed')."""
    if world is None:
        world = resolve_world(cfg)
    iso = isolated_zone(world) if cfg.variant == "skewed" else None
    return world, apply_variant(cfg, isolated_zone=iso)


def cameras_for(cfg: RunConfig, world: GridWorld):
    if cfg.n_fixed_cams <= 0:
        return []
    spec = SensorSpec(
        cfg.sensors.tracking_range_m, cfg.sensors.tracking_fov_rad, cfg.sensors.k_samples, kind=FIXED_CAMERA
    )
    cache = getattr(world, "_fc_cache", None)
    if cache is None:
        cache = world._fc_cache = {}
    key = (cfg.n_fixed_cams, spec.range_m, spec.fov_rad, spec.k_samples)
    if key not in cache:
        cache[key] = fc_place(world, cfg.n_fixed_cams, spec)[0]
    return cache[key]


def run_scenario_episode(
    world: GridWorld, cfg: RunConfig, episode_index: int, crowd_cache: dict | None = None
) -> EpisodeRecord:
    """One seeded episode of a resolved scenario (variant already applied)."""
    cs = crowd_seed_for(cfg.seed, episode_index)
    key = (
        id(world),
        cs,
        cfg.crowd.n_humans,
        cfg.crowd.dwell_mu_log_s,
        cfg.crowd.skew_zone,
        cfg.crowd.skew_factor,
        cfg.horizon,
    )
    plans = None
    if crowd_cache is not None:
        plans = crowd_cache.get(key)
    if plans is None:
        plans = crowdmod.synthesize_crowd(world, cfg.crowd, cfg.horizon, cfg.dt_s, cs)
        if crowd_cache is not None:
            crowd_cache[key] = plans
    cameras = cameras_for(cfg, world)
    planner = make_planner(cfg.planner, cfg) if cfg.robots.n_robots > 0 else None
    episode_seed = int(
        np.random.SeedSequence([int(cfg.seed), 907, int(episode_index)]).generate_state(1)[0]
    )
    return run_episode(world, plans, planner, cfg, episode_seed, fixed_cameras=cameras)


def _episode_row(spec: ScenarioSpec, cfg: RunConfig, rec: EpisodeRecord) -> EpisodeRow:
    return EpisodeRow(
        label=spec.label or spec.config_hash(),
        config_hash=spec.config_hash(),
        seed=rec.seed,
        task=cfg.task,
        planner=cfg.planner,
        n_robots=cfg.robots.n_robots,
        n_fixed=cfg.n_fixed_cams,
        variant=cfg.variant,
        metric=rec.metrics[cfg.task],
        reward=rec.episode_reward,
    )


def _sweep_worker(args):
    spec_dicts, labels, episode_index = args
    rows = []
    crowd_cache = {}
    for cfg_dict, label in zip(spec_dicts, labels):
        from .config import config_from_dict

        spec = ScenarioSpec(cfg=config_from_dict(cfg_dict), label=label)
        w, cfg = prepare_scenario(spec.cfg)
        rec = run_scenario_episode(w, cfg, episode_index, crowd_cache)
        rows.append(_episode_row(spec, cfg, rec))
    return rows


def run_sweep(specs, episodes: int, world: GridWorld | None = None, workers: int | None = None) -> SweepResult:
    """Every (config x episode seed); aggregates keyed by spec label.

    Scenarios sharing crowd parameters reuse the same synthesized crowds, so
    comparisons across planners and team sizes are paired by seed. Workers
    (default MONITORSIM_WORKERS, 1 = serial) parallelize over episode indices;
    results are identical regardless of execution order or worker count.
    """
    if not specs:
        raise ValueError("spec grid must be nonempty")
    if workers is None:
        workers = int(os.environ.get("MONITORSIM_WORKERS", "1"))
    rows = []
    if workers > 1 and world is None and episodes > 1:
        from concurrent.futures import ProcessPoolExecutor

        spec_dicts = [config_to_dict(s.cfg) for s in specs]
        labels = [s.label or s.config_hash() for s in specs]
        jobs = [(spec_dicts, labels, e) for e in range(episodes)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_sweep_worker, jobs):
                rows.extend(chunk)
    else:
        crowd_cache = {}
        resolved = []
        for spec in specs:
            w, cfg = prepare_scenario(spec.cfg, world)
            resolved.append((spec, w, cfg))
        for spec, w, cfg in resolved:
            for e in range(episodes):
                rec = run_scenario_episode(w, cfg, e, crowd_cache)
                rows.append(_episode_row(spec, cfg, rec))
    rows.sort(key=lambda r: (r.label, r.seed))
    aggregates = {}
    for label in sorted(set(r.label for r in rows)):
        vals = np.array([r.metric for r in rows if r.label == label])
        rewards = np.array([r.reward for r in rows if r.label == label])
        aggregates[label] = {
            "n": int(len(vals)),
            "metric_mean": float(vals.mean()),
            "metric_std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
            "reward_mean": float(rewards.mean()),
            "reward_std": float(rewards.std(ddof=1)) if len(rewards) > 1 else 0.0,
        }
    return SweepResult(rows=rows, aggregates=aggregates)


def marginal_utility(errors_by_n: dict) -> dict:
    """Delta(n) = E(n-1) - E(n) over a contiguous range of team sizes."""
    ns = sorted(errors_by_n)
    if not ns:
        raise MissingTeamSize("empty team-size map")
    expected = list(range(ns[0], ns[-1] + 1))
    if ns != expected:
        missing = sorted(set(expected) - set(ns))
        raise MissingTeamSize(f"missing team sizes: {missing}")
    return {n: errors_by_n[n - 1] - errors_by_n[n] for n in ns[1:]}


def correlation(pairs):
    """Pearson R plus least-squares fit and its 95% confidence band.

    Returns a dict with r, slope, intercept, and a band(x) callable.
    """
    pairs = np.asarray(pairs, dtype=float)
    if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] < 3:
        raise DegenerateVariance("need at least 3 (reward, error) pairs")
    x = pairs[:, 0]
    y = pairs[:, 1]
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0 or x.std() == 0.0 or y.std() == 0.0:
        raise DegenerateVariance("zero variance in one coordinate")
    r = float(np.corrcoef(x, y)[0, 1])
    n = len(x)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    s2 = float((resid**2).sum() / (n - 2)) if n > 2 else 0.0
    sxx = float(((x - x.mean()) ** 2).sum())
    t97 = float(stats.t.ppf(0.975, n - 2))

    def band(xq):
        xq = np.asarray(xq, dtype=float)
        se = np.sqrt(s2 * (1.0 / n + (xq - x.mean()) ** 2 / sxx))
        yq = slope * xq + intercept
        return yq - t97 * se, yq + t97 * se

    return {
        "r": r,
        "slope": float(slope),
        "intercept": float(intercept),
        "n": n,
        "band": band,
        "t97": t97,
        "residual_var": s2,
        "sxx": sxx,
        "x_mean": float(x.mean()),
    }


def sensor_footprint_counts(record: EpisodeRecord, world: GridWorld, cfg: RunConfig):
    """Per-free-cell counts of steps observed by mobile vs fixed sensors.

    Returns (mobile_counts, fixed_counts, combined_counts) aligned with
    world.free_cell_centers().
    """
    spec = SensorSpec(cfg.sensors.tracking_range_m, cfg.sensors.tracking_fov_rad, cfg.sensors.k_samples)
    n_free = len(world.free_cell_centers())
    mobile = np.zeros(n_free, dtype=np.int64)
    fixed = np.zeros(n_free, dtype=np.int64)
    combined = np.zeros(n_free, dtype=np.int64)
    cam_cover = None
    if record.fixed_cameras:
        cam_cover = np.zeros(n_free, dtype=bool)
        for p, th in record.fixed_cameras:
            idx = visible_free_cells((np.asarray(p), th), world, spec)
            cam_cover[idx] = True
    for t in range(1, record.horizon + 1):
        step_mobile = np.zeros(n_free, dtype=bool)
        for i in range(record.n_robots):
            x, y, th, _ = record.robot_traj[t, i]
            idx = visible_free_cells((np.array([x, y]), th), world, spec)
            step_mobile[idx] = True
        mobile += step_mobile
        if cam_cover is not None:
            fixed += cam_cover
            combined += step_mobile | cam_cover
        else:
            combined += step_mobile
    return mobile, fixed, combined


def visibility_heatmap(records, world: GridWorld, cfg: RunConfig):
    """Aggregate footprint heatmaps over episode records.

    Returns dict with 'mobile', 'fixed', 'combined' grids shaped like
    world.cells (float, -1 on walls).
    """
    n_free = len(world.free_cell_centers())
    mobile = np.zeros(n_free, dtype=np.int64)
    fixed = np.zeros(n_free, dtype=np.int64)
    combined = np.zeros(n_free, dtype=np.int64)
    for rec in records:
        m, f, c = sensor_footprint_counts(rec, world, cfg)
        mobile += m
        fixed += f
        combined += c
    out = {}
    fy, fx = np.nonzero(world.cells == mapgen.FREE)
    for name, counts in (("mobile", mobile), ("fixed", fixed), ("combined", combined)):
        grid = np.full(world.cells.shape, -1.0)
        grid[fy, fx] = counts
        out[name] = grid
    return out


def hybrid_sweep(base_cfg: RunConfig, splits, episodes: int, world: GridWorld | None = None) -> SweepResult:
    """Sweep (n_fixed, n_mobile) splits of a fixed total sensor budget."""
    specs = []
    for n_fixed, n_mobile in splits:
        cfg = dataclasses.replace(
            base_cfg,
            n_fixed_cams=n_fixed,
            robots=dataclasses.replace(base_cfg.robots, n_robots=n_mobile),
            planner=base_cfg.planner if n_mobile > 0 else "fc",
        )
        specs.append(ScenarioSpec(cfg=cfg, label=f"F{n_fixed}+M{n_mobile}"))
    return run_sweep(specs, episodes, world)
