"""Figure rendering for the CLI report paths. All figures go to files; nothing
opens a window (Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .mapgen import FREE, GridWorld

ZONE_CMAP = plt.get_cmap("tab10")


def render_map(world: GridWorld, path, crowd_plans=None, robot_traj=None, cameras=None):
    """Map figure: walls, zone-colored rooms, optional trajectories."""
    fig, ax = plt.subplots(figsize=(10, 10 * world.height_m / world.width_m))
    ax.imshow(
        world.cells,
        origin="lower",
        cmap="gray_r",
        extent=(0, world.width_m, 0, world.height_m),
        interpolation="nearest",
        vmin=0,
        vmax=1.6,
    )
    for z in world.zones:
        color = ZONE_CMAP(z.id % 10)
        for rid in z.room_ids:
            r = world.rooms[rid]
            ax.add_patch(
                plt.Rectangle(
                    (r.x0, r.y0), r.x1 - r.x0, r.y1 - r.y0, facecolor=color, alpha=0.25, edgecolor=color
                )
            )
        first = world.rooms[z.room_ids[0]]
        ax.text(*first.centroid, f"z{z.id}", ha="center", fontsize=9)
    if crowd_plans:
        for pl in crowd_plans:
            ax.plot(pl.positions[:, 0], pl.positions[:, 1], lw=0.5, alpha=0.6)
    if robot_traj is not None:
        for i in range(robot_traj.shape[1]):
            ax.plot(robot_traj[:, i, 0], robot_traj[:, i, 1], lw=1.2)
            ax.plot(robot_traj[0, i, 0], robot_traj[0, i, 1], "k^", ms=5)
    if cameras:
        for p, th in cameras:
            ax.plot(p[0], p[1], "bs", ms=6)
            ax.annotate(
                "", xy=(p[0] + 2 * np.cos(th), p[1] + 2 * np.sin(th)), xytext=(p[0], p[1]),
                arrowprops=dict(arrowstyle="->", color="b"),
            )
    ax.set_xlim(0, world.width_m)
    ax.set_ylim(0, world.height_m)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_sweep_bars(aggregates: dict, path, metric_name: str = "error"):
    """Grouped bar chart of aggregate metric means with std error bars."""
    labels = sorted(aggregates)
    means = [aggregates[k]["metric_mean"] for k in labels]
    stds = [aggregates[k]["metric_std"] for k in labels]
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(labels)), 4))
    xs = np.arange(len(labels))
    ax.bar(xs, means, yerr=stds, capsize=3, color=[ZONE_CMAP(i % 10) for i in range(len(labels))])
    ax.set_xticks(xs)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel(metric_name)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_marginal_utility(errors_by_n: dict, deltas: dict, path):
    ns = sorted(errors_by_n)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(ns, [errors_by_n[n] for n in ns], "o-")
    ax1.set_xlabel("robots")
    ax1.set_ylabel("tracking error [m]")
    dn = sorted(deltas)
    ax2.bar(dn, [deltas[n] for n in dn])
    ax2.set_xlabel("robots")
    ax2.set_ylabel("marginal gain")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_correlation(pairs, fit: dict, path):
    pairs = np.asarray(pairs, dtype=float)
    x, y = pairs[:, 0], pairs[:, 1]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(x, y, s=12, alpha=0.7)
    xs = np.linspace(x.min(), x.max(), 100)
    lo, hi = fit["band"](xs)
    ax.plot(xs, fit["slope"] * xs + fit["intercept"], "k--", lw=1)
    ax.fill_between(xs, lo, hi, color="k", alpha=0.15)
    ax.set_xlabel("episode reward")
    ax.set_ylabel("episode error")
    ax.set_title(f"R = {fit['r']:.3f}")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_heatmap(grids: dict, world: GridWorld, path):
    """Mobile (red) and fixed (blue) observation-count overlays on the map."""
    fig, ax = plt.subplots(figsize=(10, 10 * world.height_m / world.width_m))
    ax.imshow(
        world.cells,
        origin="lower",
        cmap="gray_r",
        extent=(0, world.width_m, 0, world.height_m),
        interpolation="nearest",
        vmin=0,
        vmax=1.6,
    )
    extent = (0, world.width_m, 0, world.height_m)
    mobile = np.ma.masked_less(grids["mobile"], 0.5)
    fixed = np.ma.masked_less(grids["fixed"], 0.5)
    vmax = max(1.0, float(grids["combined"].max()))
    ax.imshow(mobile, origin="lower", cmap="Reds", extent=extent, alpha=0.6, vmin=0, vmax=vmax)
    if not fixed.mask.all():
        ax.imshow(fixed, origin="lower", cmap="Blues", extent=extent, alpha=0.5, vmin=0, vmax=vmax)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_reward_curve(steps, rewards, path, label="mean episode reward"):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, rewards, lw=1.2)
    ax.set_xlabel("environment steps")
    ax.set_ylabel(label)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
