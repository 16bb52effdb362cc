"""Command-line entry point.

Subcommands: gen-map, simulate, sweep, placement, heatmap, correlate,
serve-bridge. Every run writes a manifest with the fully resolved
configuration next to its outputs, and report paths render figures alongside
the delimited output files.

Exit codes: 0 ok, 2 config error, 3 generation/spawn failure, 4 bridge
protocol failure, 1 other errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import __version__, eval as evalmod, mapgen, plots
from .config import (
    OOD_VARIANTS,
    PLANNERS,
    RunConfig,
    TASKS,
    config_from_dict,
    config_to_dict,
    load_config,
)
from .crowd import synthesize_crowd
from .env import EpisodeRecord
from .errors import (
    ConfigError,
    GenerationFailed,
    MonitorSimError,
    ProtocolError,
    SpawnFailed,
)

log = logging.getLogger("monitorsim")


def _load_base_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return RunConfig()


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    """Flags override file values; only explicitly passed flags apply."""
    cfg = dataclasses.replace(
        cfg,
        robots=dataclasses.replace(cfg.robots),
        crowd=dataclasses.replace(cfg.crowd),
    )
    simple = {
        "seed": "seed",
        "task": "task",
        "planner": "planner",
        "episodes": "episodes",
        "horizon": "horizon",
        "map_seed": "map_seed",
        "map_file": "map_file",
        "variant": "variant",
        "n_fixed_cams": "n_fixed_cams",
    }
    for attr, key in simple.items():
        val = getattr(args, attr, None)
        if val is not None:
            setattr(cfg, key, val)
    if getattr(args, "robots", None) is not None:
        cfg.robots.n_robots = args.robots
    if getattr(args, "humans", None) is not None:
        cfg.crowd.n_humans = args.humans
    from .config import validate_config

    validate_config(cfg)
    return cfg


def _write_manifest(out_dir: str, cfg: RunConfig, argv, outputs):
    manifest = {
        "version": __version__,
        "invocation": list(argv),
        "config": config_to_dict(cfg),
        "outputs": sorted(outputs),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _ensure_out_dir(args) -> str:
    out = getattr(args, "out_dir", None) or "."
    os.makedirs(out, exist_ok=True)
    return out


# -- subcommands ---------------------------------------------------------------


def cmd_gen_map(args, argv) -> int:
    cfg = _apply_overrides(_load_base_config(args), args)
    params = mapgen.MapParams(
        width_m=cfg.map.width_m,
        height_m=cfg.map.height_m,
        n_rooms=cfg.map.n_rooms,
        room_size_range=(cfg.map.room_min_m, cfg.map.room_max_m),
        corridor_width_m=cfg.map.corridor_width_m,
        cell_size_m=cfg.map.cell_size_m,
    )
    world = mapgen.generate_map(cfg.map_seed, params)
    mapgen.save_map(world, args.output)
    outputs = [args.output]
    if args.plot:
        png = os.path.splitext(args.output)[0] + ".png"
        plots.render_map(world, png)
        outputs.append(png)
    out_dir = os.path.dirname(os.path.abspath(args.output)) or "."
    _write_manifest(out_dir, cfg, argv, outputs)
    print(f"map with {len(world.rooms)} rooms / {world.n_zones()} zones -> {args.output}")
    return 0


def _episodes_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "seed", "task", "planner", "n_robots", "n_fixed", "variant", "metric", "reward"])
        for row in rows:
            writer.writerow(row)


def cmd_simulate(args, argv) -> int:
    from .env import run_episode
    from .planners import make_planner

    cfg = _apply_overrides(_load_base_config(args), args)
    out_dir = _ensure_out_dir(args)
    world, rcfg = evalmod.prepare_scenario(cfg)
    outputs = []
    rows = []
    replay_plans = None
    if args.crowd_file:
        from .crowd import load_crowd

        replay_plans = load_crowd(args.crowd_file)
    for e in range(rcfg.episodes):
        if replay_plans is not None:
            cameras = evalmod.cameras_for(rcfg, world)
            planner = make_planner(rcfg.planner, rcfg) if rcfg.robots.n_robots > 0 else None
            seed = int(np.random.SeedSequence([int(rcfg.seed), 907, int(e)]).generate_state(1)[0])
            rec = run_episode(world, replay_plans, planner, rcfg, seed, fixed_cameras=cameras)
        else:
            rec = evalmod.run_scenario_episode(world, rcfg, e)
        if e == 0 and args.crowd_out:
            from .crowd import save_crowd, synthesize_crowd

            plans = (
                replay_plans
                if replay_plans is not None
                else synthesize_crowd(
                    world, rcfg.crowd, rcfg.horizon, rcfg.dt_s, evalmod.crowd_seed_for(rcfg.seed, 0)
                )
            )
            save_crowd(plans, args.crowd_out)
            outputs.append(args.crowd_out)
        rec_path = os.path.join(out_dir, f"record_{e:03d}.json")
        rec.save(rec_path)
        outputs.append(rec_path)
        rows.append(
            [e, rec.seed, rcfg.task, rcfg.planner, rec.n_robots, rcfg.n_fixed_cams, rcfg.variant,
             repr(rec.metrics[rcfg.task]), repr(rec.episode_reward)]
        )
        if args.plot:
            png = os.path.join(out_dir, f"trajectories_{e:03d}.png")
            plots.render_map(world, png, robot_traj=rec.robot_traj, cameras=rec.fixed_cameras)
            outputs.append(png)
        print(
            f"episode {e}: seed {rec.seed} {rcfg.task} error "
            f"{rec.metrics[rcfg.task]:.3f} reward {rec.episode_reward:.3f}"
        )
    csv_path = os.path.join(out_dir, "episodes.csv")
    _episodes_csv(csv_path, rows)
    outputs.append(csv_path)
    _write_manifest(out_dir, rcfg, argv, outputs)
    return 0


def _sweep_specs(cfg: RunConfig, robots, planners_list, tasks):
    specs = []
    for task in tasks:
        for planner in planners_list:
            for n in robots:
                c = dataclasses.replace(
                    cfg,
                    task=task,
                    planner=planner,
                    robots=dataclasses.replace(cfg.robots, n_robots=0 if planner == "fc" else n),
                    n_fixed_cams=n if planner == "fc" else cfg.n_fixed_cams,
                )
                specs.append(evalmod.ScenarioSpec(cfg=c, label=f"{task}/{planner}/n{n}"))
    return specs


def cmd_sweep(args, argv) -> int:
    cfg = _apply_overrides(_load_base_config(args), args)
    out_dir = _ensure_out_dir(args)
    robots = [int(x) for x in args.robots_list.split(",")]
    planners_list = [p.strip() for p in args.planners.split(",")]
    for p in planners_list:
        if p not in PLANNERS:
            raise ConfigError(f"unknown planner {p!r} in --planners")
    tasks = [t.strip() for t in args.tasks.split(",")]
    for t in tasks:
        if t not in TASKS:
            raise ConfigError(f"unknown task {t!r} in --tasks")
    specs = _sweep_specs(cfg, robots, planners_list, tasks)
    result = evalmod.run_sweep(specs, args.episodes)
    outputs = []
    csv_path = os.path.join(out_dir, "episodes.csv")
    result.to_csv(csv_path)
    outputs.append(csv_path)
    agg_path = os.path.join(out_dir, "aggregates.json")
    with open(agg_path, "w") as fh:
        json.dump(result.summary_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    outputs.append(agg_path)
    for task in tasks:
        sub = {k: v for k, v in result.aggregates.items() if k.startswith(f"{task}/")}
        png = os.path.join(out_dir, f"sweep_{task}.png")
        plots.render_sweep_bars(sub, png, metric_name=f"{task} error")
        outputs.append(png)
        for planner in planners_list:
            by_n = {}
            for n in robots:
                label = f"{task}/{planner}/n{n}"
                if label in result.aggregates:
                    by_n[n] = result.aggregates[label]["metric_mean"]
            if len(by_n) >= 2 and sorted(by_n) == list(range(min(by_n), max(by_n) + 1)):
                deltas = evalmod.marginal_utility(by_n)
                mu_png = os.path.join(out_dir, f"marginal_{task}_{planner}.png")
                plots.render_marginal_utility(by_n, deltas, mu_png)
                outputs.append(mu_png)
    _write_manifest(out_dir, cfg, argv, outputs)
    for label in sorted(result.aggregates):
        a = result.aggregates[label]
        print(f"{label}: mean {a['metric_mean']:.3f} std {a['metric_std']:.3f} (n={a['n']})")
    return 0


def cmd_placement(args, argv) -> int:
    from .planners import default_camera_candidates, fc_place
    from .sensing import FIXED_CAMERA, SensorSpec

    cfg = _apply_overrides(_load_base_config(args), args)
    out_dir = _ensure_out_dir(args)
    world, rcfg = evalmod.prepare_scenario(cfg)
    spec = SensorSpec(
        rcfg.sensors.tracking_range_m, rcfg.sensors.tracking_fov_rad, rcfg.sensors.k_samples, kind=FIXED_CAMERA
    )
    placed, gains = fc_place(world, args.positions, spec)
    outputs = []
    rows = []
    n_mobile = max(0, rcfg.robots.n_robots - 1)
    for pid, (pose, gain) in enumerate(zip(placed, gains), start=1):
        c = dataclasses.replace(
            rcfg,
            n_fixed_cams=0,
            robots=dataclasses.replace(rcfg.robots, n_robots=n_mobile),
        )
        metrics = []
        for e in range(args.episodes):
            plans_seed = evalmod.crowd_seed_for(c.seed, e)
            plans = synthesize_crowd(world, c.crowd, c.horizon, c.dt_s, plans_seed)
            from .env import run_episode
            from .planners import make_planner

            episode_seed = int(np.random.SeedSequence([int(c.seed), 907, int(e)]).generate_state(1)[0])
            rec = run_episode(world, plans, make_planner(c.planner, c), c, episode_seed, fixed_cameras=[pose])
            metrics.append(rec.metrics[c.task])
        metrics = np.asarray(metrics)
        rows.append([pid, repr(float(pose[0][0])), repr(float(pose[0][1])), repr(float(pose[1])), gain,
                     repr(float(metrics.mean())), repr(float(metrics.std(ddof=1)) if len(metrics) > 1 else 0.0)])
        print(f"position {pid}: mean {metrics.mean():.3f} std {metrics.std(ddof=1) if len(metrics)>1 else 0.0:.3f}")
    csv_path = os.path.join(out_dir, "placement.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["position", "x", "y", "theta", "greedy_gain", "metric_mean", "metric_std"])
        writer.writerows(rows)
    outputs.append(csv_path)
    agg = {f"pos{r[0]}": {"metric_mean": float(r[5]), "metric_std": float(r[6]), "n": args.episodes} for r in rows}
    png = os.path.join(out_dir, "placement.png")
    plots.render_sweep_bars(agg, png, metric_name=f"{rcfg.task} error")
    outputs.append(png)
    map_png = os.path.join(out_dir, "placement_map.png")
    plots.render_map(world, map_png, cameras=placed)
    outputs.append(map_png)
    _write_manifest(out_dir, rcfg, argv, outputs)
    return 0


def cmd_heatmap(args, argv) -> int:
    cfg = _apply_overrides(_load_base_config(args), args)
    out_dir = _ensure_out_dir(args)
    world, rcfg = evalmod.prepare_scenario(cfg)
    records = []
    if args.records:
        for name in sorted(os.listdir(args.records)):
            if name.startswith("record_") and name.endswith(".json"):
                records.append(EpisodeRecord.load(os.path.join(args.records, name)))
    else:
        for e in range(rcfg.episodes):
            records.append(evalmod.run_scenario_episode(world, rcfg, e))
    grids = evalmod.visibility_heatmap(records, world, rcfg)
    outputs = []
    for name, grid in grids.items():
        mat_path = os.path.join(out_dir, f"heatmap_{name}.csv")
        np.savetxt(mat_path, grid, fmt="%.1f", delimiter=",")
        outputs.append(mat_path)
    png = os.path.join(out_dir, "heatmap.png")
    plots.render_heatmap(grids, world, png)
    outputs.append(png)
    _write_manifest(out_dir, rcfg, argv, outputs)
    print(f"heatmap over {len(records)} episode(s) -> {png}")
    return 0


def cmd_correlate(args, argv) -> int:
    cfg = _apply_overrides(_load_base_config(args), args)
    out_dir = _ensure_out_dir(args)
    world, rcfg = evalmod.prepare_scenario(cfg)
    # one fixed scenario: a single crowd, behavior varies with the episode seed
    plans = synthesize_crowd(world, rcfg.crowd, rcfg.horizon, rcfg.dt_s, evalmod.crowd_seed_for(rcfg.seed, 0))
    from .env import run_episode
    from .planners import make_planner

    cameras = evalmod.cameras_for(rcfg, world)
    pairs = []
    for e in range(rcfg.episodes):
        episode_seed = int(np.random.SeedSequence([int(rcfg.seed), 907, int(e)]).generate_state(1)[0])
        rec = run_episode(world, plans, make_planner(rcfg.planner, rcfg), rcfg, episode_seed, fixed_cameras=cameras)
        pairs.append((rec.episode_reward, rec.metrics[rcfg.task]))
    fit = evalmod.correlation(pairs)
    outputs = []
    csv_path = os.path.join(out_dir, "pairs.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "reward", "metric"])
        for e, (rw, mt) in enumerate(pairs):
            writer.writerow([e, repr(rw), repr(mt)])
    outputs.append(csv_path)
    stats_path = os.path.join(out_dir, "correlation.json")
    with open(stats_path, "w") as fh:
        json.dump(
            {k: fit[k] for k in ("r", "slope", "intercept", "n")}, fh, indent=1, sort_keys=True
        )
        fh.write("\n")
    outputs.append(stats_path)
    png = os.path.join(out_dir, "correlation.png")
    plots.render_correlation(pairs, fit, png)
    outputs.append(png)
    _write_manifest(out_dir, rcfg, argv, outputs)
    print(f"Pearson R = {fit['r']:.3f} over {fit['n']} episodes -> {png}")
    return 0


def cmd_serve_bridge(args, argv) -> int:
    from .bridge import serve_stdio, serve_tcp

    cfg = _apply_overrides(_load_base_config(args), args)
    training = not args.no_training_info
    if args.stdio:
        serve_stdio(cfg, training_mode=training)
        return 0
    serve_tcp(cfg, args.host, args.port, training_mode=training)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="monitorsim", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, episodes_default=None):
        p.add_argument("--config", help="JSON config file (flags override)")
        p.add_argument("--out-dir", help="output directory (default: cwd)")
        p.add_argument("--seed", type=int)
        p.add_argument("--map-seed", type=int, dest="map_seed")
        p.add_argument("--map-file", dest="map_file")
        p.add_argument("--task", choices=TASKS)
        p.add_argument("--planner", choices=PLANNERS)
        p.add_argument("--episodes", type=int, default=episodes_default)
        p.add_argument("--horizon", type=int)
        p.add_argument("--robots", type=int)
        p.add_argument("--humans", type=int)
        p.add_argument("--variant", choices=OOD_VARIANTS)
        p.add_argument("--n-fixed-cams", type=int, dest="n_fixed_cams")

    p = sub.add_parser("gen-map", help="generate and save a map")
    common(p)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_gen_map)

    p = sub.add_parser("simulate", help="run episodes with one planner")
    common(p)
    p.add_argument("--plot", action="store_true")
    p.add_argument("--crowd-file", dest="crowd_file", help="replay human trajectories from a dump")
    p.add_argument("--crowd-out", dest="crowd_out", help="dump episode 0's human trajectories")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="grid of planners x team sizes x tasks")
    common(p)
    p.add_argument("--robots-list", default="3,4,5", help="comma list of team sizes")
    p.add_argument("--planners", default="fc,ws,mcpp,pm", help="comma list of planners")
    p.add_argument("--tasks", default="tracking", help="comma list of tasks")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("placement", help="fixed-camera candidate study (hybrid F1+M(n-1))")
    common(p)
    p.add_argument("--positions", type=int, default=7)
    p.set_defaults(func=cmd_placement)

    p = sub.add_parser("heatmap", help="observed-region heatmaps")
    common(p)
    p.add_argument("--records", help="directory of record_*.json files to reuse")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("correlate", help="episode reward vs error correlation")
    common(p, episodes_default=None)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("serve-bridge", help="serve the policy-bridge protocol")
    common(p)
    p.add_argument("--stdio", action="store_true", help="serve over stdin/stdout")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8970)
    p.add_argument("--no-training-info", action="store_true")
    p.set_defaults(func=cmd_serve_bridge)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=os.environ.get("MONITORSIM_LOGLEVEL", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (GenerationFailed, SpawnFailed) as exc:
        print(f"generation failure: {exc}", file=sys.stderr)
        return 3
    except ProtocolError as exc:
        print(f"bridge protocol failure: {exc}", file=sys.stderr)
        return 4
    except MonitorSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
